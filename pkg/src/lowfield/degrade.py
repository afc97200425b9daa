"""Low-field MRI simulation: resample to coarser spacing, add SNR-calibrated Rician noise.

The degradation recipe is resample-then-noise: noise is a property of the
low-resolution acquisition, so it is applied on the target grid. The SNR
knob is defined as mean foreground intensity over the Gaussian component
sigma of the Rician model M = sqrt((A + n1)^2 + n2^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Volume

__all__ = [
    "SimulationParams",
    "CalibrationError",
    "resample",
    "calibrate_sigma",
    "rician_noise",
    "simulate_lowfield",
]

_INTERP_ORDER = {"trilinear": 1, "nearest": 0}


class CalibrationError(ValueError):
    """Raised when noise calibration is impossible (no foreground voxels)."""


@dataclass(frozen=True)
class SimulationParams:
    target_spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    target_snr: float = 5.0
    interpolation: str = "trilinear"
    seed: int = 0
    foreground_threshold: float = 0.1

    def __post_init__(self):
        if any(s <= 0 for s in self.target_spacing):
            raise ValueError(f"target_spacing must be positive, got {self.target_spacing}")
        if self.target_snr <= 0:
            raise ValueError(f"target_snr must be positive, got {self.target_snr}")
        if self.interpolation not in _INTERP_ORDER:
            raise ValueError(f"interpolation must be one of {sorted(_INTERP_ORDER)}")


def resample(v: Volume, target_spacing, interpolation: str = "trilinear") -> Volume:
    """Resample onto a grid with the given spacing, interpolating at physical coordinates.

    Output dims are floor(input_dims * input_spacing / target_spacing). Voxel i
    sits at physical coordinate i * spacing along each axis.
    """
    target_spacing = tuple(float(s) for s in target_spacing)
    if any(s <= 0 for s in target_spacing):
        raise ValueError(f"target_spacing must be positive, got {target_spacing}")
    if interpolation not in _INTERP_ORDER:
        raise ValueError(f"interpolation must be one of {sorted(_INTERP_ORDER)}")

    in_shape = np.asarray(v.shape, dtype=np.float64)
    in_spacing = np.asarray(v.spacing)
    out_shape = np.floor(in_shape * in_spacing / np.asarray(target_spacing)).astype(int)
    if np.any(out_shape < 1):
        raise ValueError(
            f"target spacing {target_spacing} too coarse for extent "
            f"{tuple(in_shape * in_spacing)} mm (would give dims {tuple(out_shape)})"
        )

    # Index of output voxel j in input-voxel units: j * target / input_spacing.
    axes = [
        np.arange(n) * t / s for n, t, s in zip(out_shape, target_spacing, in_spacing)
    ]
    coords = np.meshgrid(*axes, indexing="ij")
    data = ndimage.map_coordinates(
        v.data.astype(np.float64),
        np.stack([c.ravel() for c in coords]),
        order=_INTERP_ORDER[interpolation],
        mode="nearest",
    ).reshape(out_shape)
    return Volume(data=data, spacing=target_spacing, subject_id=v.subject_id)


def calibrate_sigma(v: Volume, target_snr: float, foreground_threshold: float = 0.1) -> float:
    """Noise sigma achieving the target SNR: mean foreground intensity / target_snr.

    Foreground = voxels strictly above the threshold; expects a volume
    normalized to [0, 1].
    """
    if target_snr <= 0:
        raise ValueError(f"target_snr must be positive, got {target_snr}")
    fg = v.data[v.data > foreground_threshold]
    if fg.size == 0:
        raise CalibrationError(
            f"no voxels above foreground threshold {foreground_threshold}; cannot calibrate sigma"
        )
    return float(fg.mean() / target_snr)


def rician_noise(v: Volume, sigma: float, seed: int = 0) -> Volume:
    """Apply voxelwise Rician noise: M = sqrt((A + n1)^2 + n2^2), n1, n2 ~ N(0, sigma^2).

    Deterministic given the seed. Output is everywhere non-negative;
    sigma = 0 returns |A| exactly.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    data = v.data.astype(np.float64)
    if sigma == 0:
        noisy = np.abs(data)
    else:
        rng = np.random.default_rng(seed)
        n1 = rng.normal(0.0, sigma, size=data.shape)
        n2 = rng.normal(0.0, sigma, size=data.shape)
        noisy = np.sqrt((data + n1) ** 2 + n2**2)
    return Volume(data=noisy, spacing=v.spacing, subject_id=v.subject_id)


def simulate_lowfield(v: Volume, params: SimulationParams) -> Volume:
    """Full degradation: resample to params.target_spacing, then add calibrated Rician noise.

    Expects a normalized input; sigma is calibrated on the resampled volume.
    """
    low = resample(v, params.target_spacing, params.interpolation)
    sigma = calibrate_sigma(low, params.target_snr, params.foreground_threshold)
    return rician_noise(low, sigma, params.seed)
