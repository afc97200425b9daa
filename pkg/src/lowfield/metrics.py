"""Image quality metrics (MSE, PSNR, SSIM) and cohort evaluation.

Dynamic range defaults to 1.0, matching the [0, 1] intensity
normalization convention used throughout the pipeline. PSNR of identical
volumes returns +inf rather than raising, so perfect-oracle models are
expressible in tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .volume import Volume

__all__ = [
    "SSIMParams",
    "MetricsRecord",
    "mse",
    "psnr",
    "ssim",
    "evaluate_cohort",
    "write_metrics_csv",
    "read_metrics_csv",
]


@dataclass(frozen=True)
class SSIMParams:
    window: int = 7  # 7 for 3D volumes; use 11 for 2D slices
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ValueError("k1, k2, and dynamic_range must be positive")


@dataclass(frozen=True)
class MetricsRecord:
    subject_id: str
    model: str
    ssim: float
    psnr_db: float

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim must lie in [-1, 1], got {self.ssim}")


def _as_array(v) -> np.ndarray:
    if isinstance(v, Volume):
        return v.data.astype(np.float64)
    return np.asarray(v, dtype=np.float64)


def mse(a, b) -> float:
    """Mean squared voxel difference."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB: 10 log10(max_value^2 / mse); +inf for identical inputs."""
    if max_value <= 0:
        raise ValueError(f"max_value must be positive, got {max_value}")
    err = mse(a, b)
    if err == 0:
        return math.inf
    return float(10.0 * np.log10(max_value**2 / err))


def gaussian_window(window: int, sigma: float, ndim: int) -> np.ndarray:
    """Normalized isotropic Gaussian weight kernel of side `window`."""
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(x**2) / (2.0 * sigma**2))
    kernel = g1
    for _ in range(ndim - 1):
        kernel = np.multiply.outer(kernel, g1)
    return kernel / kernel.sum()


def ssim(a, b, params: SSIMParams | None = None) -> float:
    """Structural similarity between two same-shape volumes or images.

    Gaussian-weighted local statistics; the SSIM map is averaged over
    window centers whose full window fits inside the grid. Symmetric in
    its arguments and exactly 1 for identical inputs.
    """
    if params is None:
        params = SSIMParams()
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if any(s < params.window for s in a.shape):
        raise ValueError(f"volume shape {a.shape} smaller than window {params.window}")

    kernel = gaussian_window(params.window, params.gaussian_sigma, a.ndim)
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2

    def filt(x):
        return ndimage.correlate(x, kernel, mode="constant")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b

    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    half = params.window // 2
    valid = ssim_map[tuple(slice(half, s - half) for s in a.shape)]
    return float(np.clip(valid.mean(), -1.0, 1.0))


def evaluate_cohort(
    model: Callable[[Volume], Volume] | None,
    low_set: Sequence[Volume],
    reference_set: Sequence[Volume],
    model_name: str = "model",
    ssim_params: SSIMParams | None = None,
    include_baseline: bool = True,
) -> list[MetricsRecord]:
    """Score a restoration model over a cohort of aligned (low, reference) pairs.

    Emits one record per subject for the model plus, by default, a
    `noisy_baseline` record scoring the unrestored low-field input. Pass
    model=None to compute baseline records only.
    """
    if len(low_set) != len(reference_set):
        raise ValueError(
            f"cohort size mismatch: {len(low_set)} low vs {len(reference_set)} reference"
        )
    records = []
    for i, (low, ref) in enumerate(zip(low_set, reference_set)):
        subject = low.subject_id or ref.subject_id or f"subject-{i}"
        if low.shape != ref.shape:
            raise ValueError(
                f"subject {subject}: misaligned grids {low.shape} vs {ref.shape}"
            )
        if include_baseline:
            records.append(
                MetricsRecord(
                    subject_id=subject,
                    model="noisy_baseline",
                    ssim=ssim(low, ref, ssim_params),
                    psnr_db=psnr(low, ref),
                )
            )
        if model is not None:
            restored = model(low)
            if restored.shape != ref.shape:
                raise ValueError(
                    f"subject {subject}: model output {restored.shape} misaligned with reference {ref.shape}"
                )
            records.append(
                MetricsRecord(
                    subject_id=subject,
                    model=model_name,
                    ssim=ssim(restored, ref, ssim_params),
                    psnr_db=psnr(restored, ref),
                )
            )
    return records


_CSV_HEADER = ["subject_id", "model", "ssim", "psnr_db"]


def write_metrics_csv(records: Sequence[MetricsRecord], path) -> None:
    """Export records as CSV; the +inf PSNR sentinel is written as the literal `inf`."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_HEADER)
        for r in records:
            writer.writerow([r.subject_id, r.model, repr(r.ssim), repr(r.psnr_db)])


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != _CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            MetricsRecord(row[0], row[1], float(row[2]), float(row[3])) for row in reader
        ]
