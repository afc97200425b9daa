"""Figures and summaries: difference maps, slice panels, metric histograms, model comparison.

Every figure gets a machine-readable JSON sidecar (same basename,
`.json`) with labels, slice indices, and intensity windowing, so tests
can assert layout without decoding pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsRecord
from .volume import Volume

__all__ = [
    "ComparisonSummary",
    "difference_map",
    "panel_figure",
    "histogram_report",
    "compare_models",
    "write_summary",
    "read_summary",
]

_AXIS_NAMES = {0: "axial", 1: "coronal", 2: "sagittal"}


@dataclass(frozen=True)
class ComparisonSummary:
    """Cohort-level comparison of model A (Cycle-GAN role) vs model B (DAE role).

    Percent differences are 100 * (A - B) / B on cohort means.
    """

    mean_ssim_cyclegan: float
    mean_ssim_dae: float
    mean_psnr_db_cyclegan: float
    mean_psnr_db_dae: float
    psnr_pct_diff: float
    ssim_pct_diff: float
    n_subjects: int
    n_excluded_sentinels: int

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")


def difference_map(truth: Volume, synthetic: Volume, signed: bool = False) -> Volume:
    """Voxelwise difference |truth - synthetic| (or signed truth - synthetic)."""
    if truth.shape != synthetic.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {synthetic.shape}")
    diff = truth.data.astype(np.float64) - synthetic.data.astype(np.float64)
    if not signed:
        diff = np.abs(diff)
    return Volume(data=diff, spacing=truth.spacing, subject_id=truth.subject_id)


def _central_slice(data: np.ndarray, axis: int) -> np.ndarray:
    return np.take(data, data.shape[axis] // 2, axis=axis)


def panel_figure(columns: Sequence[tuple[str, Volume]], slice_axes=(0,), out_path=None):
    """Side-by-side slice panel: one row per slice plane, one labeled column per volume.

    Intensity windowing is shared across columns so contrasts are
    comparable. Writes the raster plus a JSON sidecar describing layout.
    """
    if not columns:
        raise ValueError("panel_figure needs at least one column")
    shapes = {v.shape for _, v in columns}
    if len(shapes) > 1:
        raise ValueError(f"all panel volumes must share a grid, got {shapes}")

    vmin = min(float(v.data.min()) for _, v in columns)
    vmax = max(float(v.data.max()) for _, v in columns)
    if vmax == vmin:
        vmax = vmin + 1.0

    n_rows, n_cols = len(slice_axes), len(columns)
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(2.2 * n_cols, 2.4 * n_rows), squeeze=False)
    slice_indices = {}
    for r, axis in enumerate(slice_axes):
        for c, (label, vol) in enumerate(columns):
            ax = axes[r][c]
            ax.imshow(_central_slice(vol.data, axis).T, cmap="gray", vmin=vmin, vmax=vmax, origin="lower")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(label, fontsize=8)
            if c == 0:
                ax.set_ylabel(_AXIS_NAMES.get(axis, f"axis {axis}"), fontsize=8)
        slice_indices[str(axis)] = columns[0][1].data.shape[axis] // 2
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

    sidecar = {
        "columns": [label for label, _ in columns],
        "slice_axes": list(slice_axes),
        "slice_indices": slice_indices,
        "window": {"vmin": vmin, "vmax": vmax},
    }
    with open(_sidecar_path(out_path), "w") as f:
        json.dump(sidecar, f, indent=2)
    return out_path


def _sidecar_path(out_path) -> str:
    path = str(out_path)
    stem = path.rsplit(".", 1)[0] if "." in path.split("/")[-1] else path
    return stem + ".json"


def _fd_bins(values: np.ndarray, floor: int = 5) -> int:
    # Freedman-Diaconis with a floor so degenerate spreads still render
    if values.size < 2:
        return floor
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    if iqr <= 0:
        return floor
    width = 2 * iqr / values.size ** (1 / 3)
    span = values.max() - values.min()
    if span <= 0 or width <= 0:
        return floor
    return max(floor, int(math.ceil(span / width)))


def histogram_report(records: Sequence[MetricsRecord], out_path) -> dict:
    """SSIM and PSNR histograms, one row per model; returns per-model means/medians.

    +inf PSNR sentinels are excluded from histograms and counted in the
    returned summary.
    """
    if not records:
        raise ValueError("no records to report")
    models = sorted({r.model for r in records})

    fig, axes = plt.subplots(len(models), 2, figsize=(8, 2.5 * len(models)), squeeze=False)
    summary = {}
    for row, model in enumerate(models):
        ssims = np.array([r.ssim for r in records if r.model == model])
        psnrs_all = [r.psnr_db for r in records if r.model == model]
        psnrs = np.array([p for p in psnrs_all if math.isfinite(p)])
        n_sentinel = len(psnrs_all) - len(psnrs)

        axes[row][0].hist(ssims, bins=_fd_bins(ssims), color="steelblue")
        axes[row][0].set_title(f"{model} SSIM", fontsize=9)
        if psnrs.size:
            axes[row][1].hist(psnrs, bins=_fd_bins(psnrs), color="indianred")
        axes[row][1].set_title(f"{model} PSNR (dB)", fontsize=9)

        summary[model] = {
            "mean_ssim": float(ssims.mean()),
            "median_ssim": float(np.median(ssims)),
            "mean_psnr_db": float(psnrs.mean()) if psnrs.size else math.inf,
            "median_psnr_db": float(np.median(psnrs)) if psnrs.size else math.inf,
            "n": int(len(psnrs_all)),
            "n_psnr_sentinels_excluded": int(n_sentinel),
        }
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

    with open(_sidecar_path(out_path), "w") as f:
        json.dump({"models": models, "summary": summary}, f, indent=2, default=str)
    return summary


def compare_models(
    records_a: Sequence[MetricsRecord], records_b: Sequence[MetricsRecord]
) -> ComparisonSummary:
    """Aggregate two record lists (A = Cycle-GAN role, B = DAE role) into a ComparisonSummary."""
    if not records_a or not records_b:
        raise ValueError("both record lists must be nonempty")

    def means(records):
        ssims = [r.ssim for r in records]
        psnrs = [r.psnr_db for r in records if math.isfinite(r.psnr_db)]
        excluded = len(records) - len(psnrs)
        if not psnrs:
            raise ValueError("all PSNR values are +inf sentinels; mean undefined")
        return float(np.mean(ssims)), float(np.mean(psnrs)), excluded

    ssim_a, psnr_a, excl_a = means(records_a)
    ssim_b, psnr_b, excl_b = means(records_b)
    return ComparisonSummary(
        mean_ssim_cyclegan=ssim_a,
        mean_ssim_dae=ssim_b,
        mean_psnr_db_cyclegan=psnr_a,
        mean_psnr_db_dae=psnr_b,
        psnr_pct_diff=100.0 * (psnr_a - psnr_b) / psnr_b,
        ssim_pct_diff=100.0 * (ssim_a - ssim_b) / ssim_b,
        n_subjects=len({r.subject_id for r in records_a} | {r.subject_id for r in records_b}),
        n_excluded_sentinels=excl_a + excl_b,
    )


def write_summary(summary: ComparisonSummary, path) -> None:
    with open(path, "w") as f:
        json.dump(asdict(summary), f, indent=2)


def read_summary(path) -> ComparisonSummary:
    with open(path) as f:
        return ComparisonSummary(**json.load(f))
