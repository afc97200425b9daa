"""Command-line entry point: simulate, train, evaluate, compare, report, phantom.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure (NaN
abort, I/O). Output paths respect the LOWFIELD_OUTPUT_ROOT environment
variable for relative directories.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from . import config as config_mod
from . import degrade, metrics, nets, report, train, volume

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _list_volumes(directory):
    if not os.path.isdir(directory):
        raise UsageError(f"not a directory: {directory}")
    names = sorted(
        n for n in os.listdir(directory) if n.endswith(".nii") or n.endswith(".nii.gz")
    )
    if not names:
        raise UsageError(f"no .nii/.nii.gz files in {directory}")
    vols = []
    for n in names:
        v = volume.load_volume(os.path.join(directory, n))
        stem = n[: -len(".nii.gz")] if n.endswith(".nii.gz") else n[: -len(".nii")]
        vols.append(volume.Volume(v.data, v.spacing, subject_id=stem))
    return names, vols


def _load_experiment(args, **overrides) -> config_mod.ExperimentConfig:
    cfg = config_mod.load_config(getattr(args, "config", None), overrides)
    return cfg


def _archive_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    config_mod.save_config(cfg, os.path.join(out_dir, "resolved_config.yaml"))


def cmd_phantom(args) -> int:
    out_dir = config_mod.resolve_output_dir(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    spec = volume.PhantomSpec(
        grid_size=tuple(args.grid_size),
        num_shapes=args.num_shapes,
        seed=args.seed,
        spacing=tuple(args.spacing),
    )
    for i in range(args.count):
        phantom = volume.make_phantom(replace(spec, seed=args.seed + i))
        volume.save_volume(phantom, os.path.join(out_dir, f"phantom_{i:03d}.nii.gz"))
    print(f"wrote {args.count} phantoms to {out_dir}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_experiment(
        args,
        **{
            "seed": args.seed,
            "output_dir": args.out_dir,
            "simulation.target_snr": args.target_snr,
            "simulation.target_spacing": tuple(args.target_spacing) if args.target_spacing else None,
        },
    )
    out_dir = config_mod.resolve_output_dir(cfg)

    if args.in_dir:
        names, vols = _list_volumes(args.in_dir)
        sources = [os.path.join(args.in_dir, n) for n in names]
    else:
        spec = cfg.data.phantom
        vols = [
            volume.make_phantom(replace(spec, seed=cfg.seed + i))
            for i in range(cfg.data.phantom_count)
        ]
        names = [f"phantom_{i:03d}.nii.gz" for i in range(len(vols))]
        sources = ["<generated>"] * len(vols)

    low_dir = os.path.join(out_dir, "low")
    ref_dir = os.path.join(out_dir, "reference")
    os.makedirs(low_dir, exist_ok=True)
    os.makedirs(ref_dir, exist_ok=True)
    created = []
    manifest_rows = []
    try:
        for i, (name, v, src) in enumerate(zip(names, vols, sources)):
            if not name.endswith(".gz"):
                name += ".gz" if name.endswith(".nii") else ".nii.gz"
            clean = volume.normalize_intensity(v)
            params = replace(cfg.simulation, seed=cfg.seed + i)
            reference = degrade.resample(clean, params.target_spacing, params.interpolation)
            sigma = degrade.calibrate_sigma(
                reference, params.target_snr, params.foreground_threshold
            )
            low = degrade.rician_noise(reference, sigma, params.seed)
            low_path = os.path.join(low_dir, name)
            ref_path = os.path.join(ref_dir, name)
            volume.save_volume(low, low_path)
            created.append(low_path)
            volume.save_volume(reference, ref_path)
            created.append(ref_path)
            manifest_rows.append(
                [src, low_path, repr(sigma), "x".join(map(str, params.target_spacing)), params.seed]
            )
    except Exception:
        for path in created:
            if os.path.exists(path):
                os.remove(path)
        raise

    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["input", "output", "sigma", "spacing", "seed"])
        writer.writerows(manifest_rows)
    _archive_config(cfg, out_dir)
    print(f"simulated {len(manifest_rows)} low-field volumes in {out_dir}")
    return 0


def _train_common(args):
    cfg = _load_experiment(
        args,
        **{
            "seed": args.seed,
            "output_dir": args.out_dir,
            "training.epochs": args.epochs,
            "training.seed": args.seed,
            "data.low_dir": getattr(args, "low_dir", None),
            "data.high_dir": getattr(args, "high_dir", None),
            "data.reference_dir": getattr(args, "reference_dir", None),
        },
    )
    out_dir = config_mod.resolve_output_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def _merge_histories(out_dir, history):
    path = os.path.join(out_dir, "history.csv")
    if os.path.exists(path):
        old = train.TrainHistory.from_csv(path)
        for rec in history.records:
            old.records.append(rec)
        history = old
    history.to_csv(path)
    return path


def cmd_train_cyclegan(args) -> int:
    cfg, out_dir = _train_common(args)
    if not cfg.data.low_dir or not cfg.data.high_dir:
        raise UsageError("train-cyclegan needs data.low_dir and data.high_dir (or --low-dir/--high-dir)")
    _, low_vols = _list_volumes(cfg.data.low_dir)
    _, high_vols = _list_volumes(cfg.data.high_dir)
    ckpt_dir = os.path.join(out_dir, "checkpoints")

    models = None
    start_epoch = 1
    if args.resume:
        models = train.CycleGanModels(
            **{
                name: nets.load_checkpoint(os.path.join(ckpt_dir, f"{name}_final.pt"))
                for name in ("g_low2high", "g_high2low", "d_high", "d_low")
            }
        )
        hist_path = os.path.join(out_dir, "history.csv")
        if os.path.exists(hist_path):
            prev = train.TrainHistory.from_csv(hist_path)
            if prev.records:
                start_epoch = prev.records[-1]["epoch"] + 1

    models, history = train.train_cyclegan(
        low_vols,
        high_vols,
        cfg.training,
        cfg.generator,
        cfg.discriminator,
        checkpoint_dir=ckpt_dir,
        models=models,
        start_epoch=start_epoch,
    )
    _merge_histories(out_dir, history)
    _archive_config(cfg, out_dir)
    print(f"trained cyclegan for {cfg.training.epochs} epochs; outputs in {out_dir}")
    return 0


def cmd_train_dae(args) -> int:
    cfg, out_dir = _train_common(args)
    if not cfg.data.low_dir or not cfg.data.reference_dir:
        raise UsageError("train-dae needs data.low_dir and data.reference_dir (or --low-dir/--reference-dir)")
    low_names, low_vols = _list_volumes(cfg.data.low_dir)
    ref_names, ref_vols = _list_volumes(cfg.data.reference_dir)
    if low_names != ref_names:
        raise UsageError("low and reference directories must contain the same filenames (paired data)")
    ckpt_dir = os.path.join(out_dir, "checkpoints")

    model = None
    start_epoch = 1
    if args.resume:
        model = nets.load_checkpoint(os.path.join(ckpt_dir, "dae_final.pt"))
        hist_path = os.path.join(out_dir, "history.csv")
        if os.path.exists(hist_path):
            prev = train.TrainHistory.from_csv(hist_path)
            if prev.records:
                start_epoch = prev.records[-1]["epoch"] + 1

    model, history = train.train_dae(
        list(zip(low_vols, ref_vols)),
        cfg.training,
        cfg.dae,
        checkpoint_dir=ckpt_dir,
        model=model,
        start_epoch=start_epoch,
    )
    _merge_histories(out_dir, history)
    _archive_config(cfg, out_dir)
    print(f"trained dae for {cfg.training.epochs} epochs; outputs in {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    _, low_vols = _list_volumes(args.low_dir)
    _, ref_vols = _list_volumes(args.reference_dir)
    if args.checkpoint == "identity":
        model_fn = lambda v: v  # noqa: E731 - identity stub for baselines
        name = args.model_name or "identity"
    else:
        model = nets.load_checkpoint(args.checkpoint)
        model_fn = lambda v: train.restore_volume(model, v)  # noqa: E731
        name = args.model_name or ("dae" if isinstance(model, nets.DenoisingAutoencoder) else "cyclegan")
    ssim_params = None
    if low_vols[0].data.ndim == 3 and min(low_vols[0].shape) < 7:
        raise UsageError(f"volumes too small for the SSIM window: {low_vols[0].shape}")
    records = metrics.evaluate_cohort(model_fn, low_vols, ref_vols, model_name=name, ssim_params=ssim_params)
    metrics.write_metrics_csv(records, args.out)
    print(f"wrote {len(records)} metric records to {args.out}")
    return 0


def cmd_compare(args) -> int:
    records_a = metrics.read_metrics_csv(args.csv_a)
    records_b = metrics.read_metrics_csv(args.csv_b)
    if args.model_a:
        records_a = [r for r in records_a if r.model == args.model_a]
    if args.model_b:
        records_b = [r for r in records_b if r.model == args.model_b]
    summary = report.compare_models(records_a, records_b)
    if args.out:
        report.write_summary(summary, args.out)
    print(json.dumps(summary.__dict__, indent=2))
    return 0


def cmd_report(args) -> int:
    out_dir = config_mod.resolve_output_dir(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for path in args.metrics_csv:
        records.extend(metrics.read_metrics_csv(path))
    report.histogram_report(records, os.path.join(out_dir, "histograms.png"))
    if args.panel:
        columns = []
        for item in args.panel:
            label, _, path = item.partition("=")
            if not path:
                raise UsageError(f"--panel items must be label=path, got {item!r}")
            columns.append((label, volume.load_volume(path)))
        report.panel_figure(columns, slice_axes=tuple(args.slice_axes), out_path=os.path.join(out_dir, "panel.png"))
    print(f"report written to {out_dir}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="lowfield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="experiment config YAML")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out-dir", help="override the output directory")

    p = sub.add_parser("phantom", help="generate procedural test volumes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--grid-size", type=int, nargs=3, default=[32, 32, 32])
    p.add_argument("--num-shapes", type=int, default=4)
    p.add_argument("--spacing", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="synthesize low-field volumes (resample + Rician noise)")
    add_common(p)
    p.add_argument("--in-dir", help="directory of clean input volumes; omit to use config phantoms")
    p.add_argument("--target-snr", type=float)
    p.add_argument("--target-spacing", type=float, nargs=3)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-cyclegan", help="train the unpaired Cycle-GAN restorer")
    add_common(p)
    p.add_argument("--low-dir")
    p.add_argument("--high-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the final checkpoint")
    p.set_defaults(func=cmd_train_cyclegan)

    p = sub.add_parser("train-dae", help="train the paired DAE baseline")
    add_common(p)
    p.add_argument("--low-dir")
    p.add_argument("--reference-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_dae)

    p = sub.add_parser("evaluate", help="score a checkpoint over a cohort")
    p.add_argument("--checkpoint", required=True, help="model checkpoint, or 'identity' for a stub")
    p.add_argument("--low-dir", required=True)
    p.add_argument("--reference-dir", required=True)
    p.add_argument("--model-name")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare two metric CSVs (A vs B percent differences)")
    p.add_argument("csv_a")
    p.add_argument("csv_b")
    p.add_argument("--model-a", help="filter csv_a to this model name")
    p.add_argument("--model-b")
    p.add_argument("--out", help="summary JSON path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="histogram and panel figures from metric CSVs")
    p.add_argument("--metrics-csv", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--panel", nargs="+", help="panel columns as label=volume_path")
    p.add_argument("--slice-axes", type=int, nargs="+", default=[0])
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as e:
        print(f"failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
