"""Volume container, NIfTI-1 I/O, normalization, and procedural phantoms.

Only the NIfTI-1 fields needed by this pipeline are handled: grid
dimensions, voxel spacing (pixdim), and scalar little-endian data.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Volume",
    "PhantomSpec",
    "NiftiFormatError",
    "load_volume",
    "save_volume",
    "normalize_intensity",
    "make_phantom",
]


class NiftiFormatError(ValueError):
    """Raised when a file is not a readable NIfTI-1 volume."""


_HDR_SIZE = 348
_MAGIC = b"n+1\x00"

# NIfTI-1 datatype code -> numpy dtype (little-endian scalar types only)
_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
    256: np.dtype("<i1"),
    512: np.dtype("<u2"),
    768: np.dtype("<u4"),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    subject_id: str | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got ndim={data.ndim}")
        if any(s < 1 for s in data.shape):
            raise ValueError(f"all grid dimensions must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data contains NaN or Inf")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a procedural test volume: smooth ellipsoids on a flat background."""

    grid_size: tuple[int, int, int] = (64, 64, 64)
    num_shapes: int = 4
    intensity_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if any(g < 8 for g in self.grid_size):
            raise ValueError(f"grid_size components must be >= 8, got {self.grid_size}")
        if self.num_shapes < 1:
            raise ValueError("num_shapes must be positive")
        bg, fg = self.intensity_range
        if not bg < fg:
            raise ValueError(
                f"intensity_range must be ordered background < max foreground, got {self.intensity_range}"
            )


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def load_volume(path) -> Volume:
    """Read a NIfTI-1 file (.nii or .nii.gz) into a Volume.

    Intensities are returned exactly as stored; no scaling is applied.
    Raises FileNotFoundError for missing files and NiftiFormatError for
    malformed headers, naming the offending field.
    """
    with _open(path, "rb") as f:
        hdr = f.read(_HDR_SIZE)
        if len(hdr) < _HDR_SIZE:
            raise NiftiFormatError(f"{path}: file shorter than the {_HDR_SIZE}-byte header")
        (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
        if sizeof_hdr != _HDR_SIZE:
            raise NiftiFormatError(
                f"{path}: sizeof_hdr is {sizeof_hdr}, expected {_HDR_SIZE} "
                "(big-endian files are not supported)"
            )
        magic = hdr[344:348]
        if magic != _MAGIC:
            raise NiftiFormatError(f"{path}: magic is {magic!r}, expected {_MAGIC!r}")
        dim = struct.unpack_from("<8h", hdr, 40)
        ndim = dim[0]
        if not 3 <= ndim <= 7 or any(d != 1 for d in dim[4 : 1 + ndim]):
            raise NiftiFormatError(f"{path}: dim {dim} does not describe a 3D volume")
        shape = dim[1:4]
        if any(d < 1 for d in shape):
            raise NiftiFormatError(f"{path}: dim has non-positive sizes {shape}")
        (datatype,) = struct.unpack_from("<h", hdr, 70)
        if datatype not in _DTYPES:
            raise NiftiFormatError(f"{path}: unsupported datatype code {datatype}")
        pixdim = struct.unpack_from("<8f", hdr, 76)
        spacing = pixdim[1:4]
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise NiftiFormatError(f"{path}: pixdim spacing {spacing} is not positive")
        (vox_offset,) = struct.unpack_from("<f", hdr, 108)
        vox_offset = int(vox_offset)
        if vox_offset < _HDR_SIZE:
            raise NiftiFormatError(f"{path}: vox_offset {vox_offset} precedes the header end")
        f.read(vox_offset - _HDR_SIZE)
        dtype = _DTYPES[datatype]
        count = int(np.prod(shape))
        raw = f.read(count * dtype.itemsize)
        if len(raw) < count * dtype.itemsize:
            raise NiftiFormatError(f"{path}: data section truncated (dim promises {count} voxels)")
        data = np.frombuffer(raw, dtype=dtype).reshape(shape, order="F")
    return Volume(data=data, spacing=spacing)


def save_volume(v: Volume, path) -> None:
    """Write a Volume as NIfTI-1; round-trips exactly through load_volume.

    Data is stored in its native dtype when NIfTI supports it, float64
    otherwise. Spacing goes to pixdim as float32, so use values exactly
    representable in single precision if bit-exact round trips matter.
    """
    data = np.asarray(v.data)
    dtype = data.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        dtype = np.dtype("<f8")
    data = np.ascontiguousarray(data.astype(dtype, copy=False))

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _DTYPE_CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *v.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(_HDR_SIZE + 4))
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[344:348] = _MAGIC

    with _open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00\x00\x00\x00")  # no header extensions
        f.write(data.tobytes(order="F"))


def normalize_intensity(v: Volume) -> Volume:
    """Affine-map intensities to [0, 1] (min -> 0, max -> 1).

    A constant volume maps to all zeros rather than erroring.
    """
    data = v.data.astype(np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        out = np.zeros_like(data)
    else:
        out = (data - lo) / (hi - lo)
    return Volume(data=out, spacing=v.spacing, subject_id=v.subject_id)


def make_phantom(spec: PhantomSpec) -> Volume:
    """Generate a deterministic phantom: smooth-edged ellipsoids on a uniform background.

    The first ellipsoid is centered on the grid and carries the maximum
    foreground intensity, so tests can locate known structure; remaining
    shapes get random interior positions, sizes, and intensities. Edges
    fall off linearly over roughly one voxel. Pure function of the spec.
    """
    rng = np.random.default_rng(spec.seed)
    gs = np.asarray(spec.grid_size)
    bg, fg = spec.intensity_range
    canvas = np.full(spec.grid_size, bg, dtype=np.float64)
    grids = np.meshgrid(*(np.arange(g, dtype=np.float64) for g in gs), indexing="ij")

    for i in range(spec.num_shapes):
        if i == 0:
            center = (gs // 2).astype(np.float64)
            semi = np.maximum(gs // 4, 2).astype(np.float64)
            semi = np.minimum(semi, gs // 2 - 2)
            intensity = fg
        else:
            semi = rng.uniform(gs / 8, gs / 4)
            lo = semi + 2
            hi = gs - 3 - semi
            center = rng.uniform(np.minimum(lo, hi), np.maximum(lo, hi))
            intensity = rng.uniform(bg + 0.4 * (fg - bg), fg)
        semi = np.maximum(semi, 1.5)
        r = np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, semi)))
        weight = np.clip((1.0 - r) * semi.min(), 0.0, 1.0)
        canvas = np.maximum(canvas, bg + (intensity - bg) * weight)

    return Volume(data=canvas, spacing=spec.spacing, subject_id=f"phantom-{spec.seed}")
