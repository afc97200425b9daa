"""Losses and training loops: unpaired Cycle-GAN and paired DAE baseline.

Cycle-GAN training alternates a generator phase (both discriminators
frozen) and a discriminator phase (generators frozen). Losses: least
squares adversarial by default, L1 cycle consistency weighted by
cycle_weight, optional identity loss behind identity_weight.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .nets import (
    DAEConfig,
    DiscriminatorConfig,
    GeneratorConfig,
    build_dae,
    build_discriminator,
    build_generator,
    save_checkpoint,
)
from .volume import Volume

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "StepLosses",
    "CycleGanModels",
    "cycle_loss",
    "adversarial_loss",
    "cyclegan_step",
    "train_cyclegan",
    "train_dae",
    "restore_volume",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    learning_rate: float = 2e-4
    cycle_weight: float = 10.0
    identity_weight: float = 0.0
    gan_loss: str = "least_squares"
    seed: int = 0
    patch_size: tuple[int, ...] | None = None
    betas: tuple[float, float] = (0.5, 0.999)
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        # cycle_weight 0 is allowed so the no-cycle-pressure case is testable
        if self.cycle_weight < 0 or self.identity_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.gan_loss not in ("least_squares", "cross_entropy"):
            raise ValueError(f"unknown gan_loss {self.gan_loss!r}")


class TrainHistory:
    """Per-epoch loss records, exportable as a long-format CSV (epoch, loss_name, value)."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, epoch: int, losses: dict[str, float]) -> None:
        for name, value in losses.items():
            if not np.isfinite(value):
                raise ValueError(f"non-finite loss {name}={value} at epoch {epoch}")
        self.records.append({"epoch": epoch, **losses})

    def __len__(self):
        return len(self.records)

    def series(self, loss_name: str) -> list[float]:
        return [r[loss_name] for r in self.records if loss_name in r]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "loss_name", "value"])
            for record in self.records:
                for name, value in record.items():
                    if name != "epoch":
                        writer.writerow([record["epoch"], name, repr(value)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        hist = cls()
        by_epoch: dict[int, dict] = {}
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            for epoch, name, value in reader:
                by_epoch.setdefault(int(epoch), {})[name] = float(value)
        for epoch in sorted(by_epoch):
            hist.append(epoch, by_epoch[epoch])
        return hist


def cycle_loss(x: torch.Tensor, x_reconstructed: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error; zero iff the tensors are equal."""
    if x.shape != x_reconstructed.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_reconstructed.shape)}")
    return torch.mean(torch.abs(x_reconstructed - x))


def adversarial_loss(
    scores: torch.Tensor, target_is_real: bool, variant: str = "least_squares"
) -> torch.Tensor:
    """GAN objective on a patch score map; least squares pushes scores to 1 (real) or 0 (synthetic)."""
    target = torch.ones_like(scores) if target_is_real else torch.zeros_like(scores)
    if variant == "least_squares":
        return torch.mean((scores - target) ** 2)
    if variant == "cross_entropy":
        return nn.functional.binary_cross_entropy_with_logits(scores, target)
    raise ValueError(f"unknown adversarial loss variant {variant!r}")


@dataclass
class CycleGanModels:
    g_low2high: nn.Module  # G: low-field -> high-field
    g_high2low: nn.Module  # G': high-field -> low-field
    d_high: nn.Module  # discriminates real vs synthetic high-field
    d_low: nn.Module


@dataclass(frozen=True)
class StepLosses:
    g_total: float
    g_adv_high: float
    g_adv_low: float
    cycle_low: float
    cycle_high: float
    identity: float
    d_high: float
    d_low: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value):
        raise RuntimeError(f"NaN/Inf in loss component '{name}' ({value.item()}); aborting")
    return value


def _set_requires_grad(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def cyclegan_step(
    batch_low: torch.Tensor,
    batch_high: torch.Tensor,
    models: CycleGanModels,
    opt_g: torch.optim.Optimizer,
    opt_d_high: torch.optim.Optimizer,
    opt_d_low: torch.optim.Optimizer,
    cfg: TrainConfig,
) -> StepLosses:
    """One alternating Cycle-GAN update: generators first (discriminators frozen), then discriminators."""
    g, gp = models.g_low2high, models.g_high2low

    # --- generator phase ---
    _set_requires_grad(models.d_high, False)
    _set_requires_grad(models.d_low, False)

    fake_high = g(batch_low)
    rec_low = gp(fake_high)
    fake_low = gp(batch_high)
    rec_high = g(fake_low)

    adv_high = _check_finite("g_adv_high", adversarial_loss(models.d_high(fake_high), True, cfg.gan_loss))
    adv_low = _check_finite("g_adv_low", adversarial_loss(models.d_low(fake_low), True, cfg.gan_loss))
    cyc_low = _check_finite("cycle_low", cycle_loss(batch_low, rec_low))
    cyc_high = _check_finite("cycle_high", cycle_loss(batch_high, rec_high))

    if cfg.identity_weight > 0:
        idt = _check_finite(
            "identity",
            cycle_loss(batch_high, g(batch_high)) + cycle_loss(batch_low, gp(batch_low)),
        )
    else:
        idt = torch.zeros(())

    g_total = adv_high + adv_low + cfg.cycle_weight * (cyc_low + cyc_high) + cfg.identity_weight * idt
    opt_g.zero_grad()
    g_total.backward()
    opt_g.step()

    # --- discriminator phase ---
    _set_requires_grad(models.d_high, True)
    _set_requires_grad(models.d_low, True)

    d_high_loss = 0.5 * (
        adversarial_loss(models.d_high(batch_high), True, cfg.gan_loss)
        + adversarial_loss(models.d_high(fake_high.detach()), False, cfg.gan_loss)
    )
    _check_finite("d_high", d_high_loss)
    opt_d_high.zero_grad()
    d_high_loss.backward()
    opt_d_high.step()

    d_low_loss = 0.5 * (
        adversarial_loss(models.d_low(batch_low), True, cfg.gan_loss)
        + adversarial_loss(models.d_low(fake_low.detach()), False, cfg.gan_loss)
    )
    _check_finite("d_low", d_low_loss)
    opt_d_low.zero_grad()
    d_low_loss.backward()
    opt_d_low.step()

    return StepLosses(
        g_total=g_total.item(),
        g_adv_high=adv_high.item(),
        g_adv_low=adv_low.item(),
        cycle_low=cyc_low.item(),
        cycle_high=cyc_high.item(),
        identity=idt.item(),
        d_high=d_high_loss.item(),
        d_low=d_low_loss.item(),
    )


def _volume_samples(volumes: Sequence[Volume], spatial_rank: str) -> list[torch.Tensor]:
    """Volumes as training samples: whole volumes in 3D mode, axial slices in 2D mode."""
    samples = []
    for v in volumes:
        t = torch.from_numpy(v.data.astype(np.float32))
        if spatial_rank == "3D":
            samples.append(t.unsqueeze(0))
        else:
            samples.extend(t[i].unsqueeze(0) for i in range(t.shape[0]))
    return samples


def _crop_slices(spatial, patch_size, rng: np.random.Generator):
    if patch_size is None or all(s <= p for s, p in zip(spatial, patch_size)):
        return (slice(None),) * (len(spatial) + 1)
    starts = [rng.integers(0, s - p + 1) if s > p else 0 for s, p in zip(spatial, patch_size)]
    return (slice(None),) + tuple(
        slice(st, st + min(p, s)) for st, p, s in zip(starts, patch_size, spatial)
    )


def _crop(sample: torch.Tensor, patch_size, rng: np.random.Generator) -> torch.Tensor:
    return sample[_crop_slices(sample.shape[1:], patch_size, rng)]


def _batches(samples, batch_size, patch_size, rng):
    order = rng.permutation(len(samples))
    for start in range(0, len(samples) - batch_size + 1, batch_size):
        idx = order[start : start + batch_size]
        yield torch.stack([_crop(samples[i], patch_size, rng) for i in idx])


def train_cyclegan(
    low_set: Sequence[Volume],
    high_set: Sequence[Volume],
    cfg: TrainConfig,
    gen_cfg: GeneratorConfig | None = None,
    disc_cfg: DiscriminatorConfig | None = None,
    checkpoint_dir=None,
    models: CycleGanModels | None = None,
    start_epoch: int = 1,
) -> tuple[CycleGanModels, TrainHistory]:
    """Train the unpaired Cycle-GAN on independently drawn batches from both domains.

    Pass `models` and `start_epoch` to resume from a checkpoint; epoch
    numbering in the history continues from start_epoch.
    """
    if not low_set or not high_set:
        raise ValueError("both domains must be nonempty")
    gen_cfg = gen_cfg or GeneratorConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig(spatial_rank=gen_cfg.spatial_rank)

    torch.manual_seed(cfg.seed)
    if models is None:
        models = CycleGanModels(
            g_low2high=build_generator(gen_cfg),
            g_high2low=build_generator(gen_cfg),
            d_high=build_discriminator(disc_cfg),
            d_low=build_discriminator(disc_cfg),
        )
    opt_g = torch.optim.Adam(
        list(models.g_low2high.parameters()) + list(models.g_high2low.parameters()),
        lr=cfg.learning_rate,
        betas=cfg.betas,
    )
    opt_d_high = torch.optim.Adam(models.d_high.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    opt_d_low = torch.optim.Adam(models.d_low.parameters(), lr=cfg.learning_rate, betas=cfg.betas)

    low_samples = _volume_samples(low_set, gen_cfg.spatial_rank)
    high_samples = _volume_samples(high_set, gen_cfg.spatial_rank)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()

    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        sums: dict[str, float] = {}
        n_steps = 0
        for batch_low, batch_high in zip(
            _batches(low_samples, cfg.batch_size, cfg.patch_size, rng),
            _batches(high_samples, cfg.batch_size, cfg.patch_size, rng),
        ):
            losses = cyclegan_step(
                batch_low, batch_high, models, opt_g, opt_d_high, opt_d_low, cfg
            )
            for name, value in losses.as_dict().items():
                sums[name] = sums.get(name, 0.0) + value
            n_steps += 1
        if n_steps == 0:
            raise ValueError(
                f"batch_size {cfg.batch_size} exceeds the number of samples "
                f"({len(low_samples)} low / {len(high_samples)} high)"
            )
        history.append(epoch, {k: s / n_steps for k, s in sums.items()})
        if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            _save_cyclegan(models, checkpoint_dir, f"epoch{epoch:04d}")

    if checkpoint_dir:
        _save_cyclegan(models, checkpoint_dir, "final")
    return models, history


def _save_cyclegan(models: CycleGanModels, checkpoint_dir, tag: str) -> None:
    os.makedirs(checkpoint_dir, exist_ok=True)
    for name in ("g_low2high", "g_high2low", "d_high", "d_low"):
        save_checkpoint(getattr(models, name), os.path.join(checkpoint_dir, f"{name}_{tag}.pt"))


def train_dae(
    pairs: Sequence[tuple[Volume, Volume]],
    cfg: TrainConfig,
    dae_cfg: DAEConfig | None = None,
    checkpoint_dir=None,
    model: nn.Module | None = None,
    start_epoch: int = 1,
) -> tuple[nn.Module, TrainHistory]:
    """Train the paired DAE baseline: minimize L1 between DAE(low) and the aligned high target."""
    if not pairs:
        raise ValueError("pairs must be nonempty")
    dae_cfg = dae_cfg or DAEConfig()
    for i, (low, high) in enumerate(pairs):
        if low.shape != high.shape:
            raise ValueError(
                f"pair {i} ({low.subject_id or '?'}): misaligned shapes {low.shape} vs {high.shape}"
            )

    torch.manual_seed(cfg.seed)
    if model is None:
        model = build_dae(dae_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas)

    low_samples = _volume_samples([p[0] for p in pairs], dae_cfg.spatial_rank)
    high_samples = _volume_samples([p[1] for p in pairs], dae_cfg.spatial_rank)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()

    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        order = rng.permutation(len(low_samples))
        total, n_steps = 0.0, 0
        for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_low, batch_high = [], []
            for i in idx:
                # crop low and high with the same window so pairs stay aligned
                sl = _crop_slices(low_samples[i].shape[1:], cfg.patch_size, rng)
                batch_low.append(low_samples[i][sl])
                batch_high.append(high_samples[i][sl])
            pred = model(torch.stack(batch_low))
            loss = _check_finite("reconstruction", cycle_loss(torch.stack(batch_high), pred))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            n_steps += 1
        if n_steps == 0:
            raise ValueError(
                f"batch_size {cfg.batch_size} exceeds the number of samples ({len(low_samples)})"
            )
        history.append(epoch, {"reconstruction": total / n_steps})
        if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            os.makedirs(checkpoint_dir, exist_ok=True)
            save_checkpoint(model, os.path.join(checkpoint_dir, f"dae_epoch{epoch:04d}.pt"))
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
        save_checkpoint(model, os.path.join(checkpoint_dir, "dae_final.pt"))
    return model, history


def restore_volume(model: nn.Module, v: Volume) -> Volume:
    """Apply a trained restorer to a Volume: whole volume in 3D mode, slice-wise in 2D mode."""
    model.eval()
    data = torch.from_numpy(v.data.astype(np.float32))
    with torch.no_grad():
        if getattr(model.cfg, "spatial_rank", "3D") == "3D":
            out = model(data.unsqueeze(0).unsqueeze(0))[0, 0]
        else:
            slices = [model(data[i].unsqueeze(0).unsqueeze(0))[0, 0] for i in range(data.shape[0])]
            out = torch.stack(slices)
    return Volume(data=out.numpy().astype(np.float64), spacing=v.spacing, subject_id=v.subject_id)
