"""Dense 3D volumes, raw+JSON file I/O, and the preprocessing operations.

Arrays are stored C-ordered with shape ``(nz, ny, nx)`` so that ``x`` varies
fastest in memory; ``dims`` and voxel sizes are always reported in
``(x, y, z)`` order. Binary masks are plain boolean arrays of the same shape.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import transform as tf
from ._accel import NUMBA_AVAILABLE
from .errors import ConstantVolume, DimsMismatch, DimsTooSmall, FormatError
from .kernels import resample as _rk


@dataclass
class Volume:
    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise FormatError(f"volume must be 3D, got shape {self.data.shape}")
        self.voxel_size = tuple(float(s) for s in self.voxel_size)
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise FormatError(f"invalid voxel size {self.voxel_size}")

    @property
    def dims(self):
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def center(self):
        """Geometric centre in voxel coordinates ``(x, y, z)``."""
        return (np.asarray(self.dims, dtype=float) - 1.0) / 2.0

    def with_data(self, data):
        return Volume(data, self.voxel_size, dict(self.meta))


def _shape(dims):
    nx, ny, nz = (int(d) for d in dims)
    return (nz, ny, nx)


# ---------------------------------------------------------------- file I/O


def _paths(path):
    base, ext = os.path.splitext(str(path))
    if ext not in (".raw", ".json"):
        base = str(path)
    return base + ".raw", base + ".json"


def save_volume(vol, path):
    """Write ``<base>.raw`` (little-endian float32, x fastest) and ``<base>.json``."""
    raw, side = _paths(path)
    data = vol.data
    meta = {
        "dims": list(vol.dims),
        "voxel_size_um": list(vol.voxel_size),
        "intensity_range": [float(data.min()), float(data.max())] if data.size else [0.0, 0.0],
        "dtype": "float32",
    }
    data.astype("<f4", copy=False).tofile(raw)
    with open(side, "w") as fh:
        json.dump(meta, fh, indent=2)
    return raw, side


def load_volume(path):
    """Read a volume written by :func:`save_volume` (or a legacy uint8 payload)."""
    raw, side = _paths(path)
    try:
        with open(side) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON sidecar") from exc
    try:
        dims = [int(d) for d in meta["dims"]]
        voxel = [float(s) for s in meta.get("voxel_size_um", (1.0, 1.0, 1.0))]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{side}: missing or malformed dims") from exc
    if len(dims) != 3 or min(dims) <= 0:
        raise FormatError(f"{side}: dims must be three positive integers")
    dtype = {"float32": "<f4", "uint8": "u1"}.get(meta.get("dtype", "float32"))
    if dtype is None:
        raise FormatError(f"{side}: unsupported dtype {meta.get('dtype')!r}")
    payload = np.fromfile(raw, dtype=dtype)
    if payload.size != dims[0] * dims[1] * dims[2]:
        raise FormatError(
            f"{raw}: {payload.size} voxels in payload, sidecar dims {dims} need {np.prod(dims)}"
        )
    return Volume(payload.astype(np.float32).reshape(_shape(dims)), voxel)


# ---------------------------------------------------------- resampling


def _linear_axis(data, axis, n_out, step):
    n = data.shape[axis]
    pos = np.arange(n_out) * step
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    f = np.clip(pos - i0, 0.0, 1.0)
    shape = [1, 1, 1]
    shape[axis] = n_out
    f = f.reshape(shape)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    return (1.0 - f) * a + f * b


def resample_to(vol, target_voxel):
    """Resample onto a grid with voxel size ``target_voxel`` (trilinear, edge-clamped)."""
    target = np.broadcast_to(np.asarray(target_voxel, dtype=float), (3,))
    if np.any(target <= 0):
        raise ValueError("target voxel sizes must be positive")
    old = np.asarray(vol.voxel_size)
    if np.allclose(old, target, rtol=0, atol=1e-12):
        return Volume(vol.data.copy(), tuple(target), dict(vol.meta))
    dims = np.asarray(vol.dims)
    new_dims = np.maximum(1, np.round(dims * old / target).astype(int))
    data = vol.data.astype(np.float64)
    # axis order of the array is (z, y, x)
    for axis, k in ((2, 0), (1, 1), (0, 2)):
        data = _linear_axis(data, axis, new_dims[k], target[k] / old[k])
    return Volume(data, tuple(target), dict(vol.meta))


def resample_rigid(vol, T, interp="linear", out_dims=None):
    """Apply the rigid transform ``T`` (voxel coordinates) to the volume content.

    ``output(x) = interp(vol, inverse(T) @ x)``; samples falling outside the
    source are zero. ``interp`` is one of ``nearest``, ``linear``, ``cubic``
    (separable Catmull-Rom). Cubic output is clipped to the input range.
    """
    order = _rk.ORDERS[interp]
    Ti = tf.invert(T)
    A = np.ascontiguousarray(Ti[:3, :3])
    b = np.ascontiguousarray(Ti[:3, 3])
    shape = vol.data.shape if out_dims is None else _shape(out_dims)
    if NUMBA_AVAILABLE:
        out = _rk.resample_numba(vol.data, A, b, np.asarray(shape, dtype=np.int64), order)
    else:
        out = _rk.resample_numpy(vol.data, A, b, shape, order)
    if order == 3 and vol.data.size:
        np.clip(out, min(vol.data.min(), 0.0), vol.data.max(), out=out)
    return vol.with_data(out)


# ------------------------------------------------------- intensity ops


def pad_offset(src_dims, dims):
    src = np.asarray(src_dims, dtype=int)
    dst = np.asarray(dims, dtype=int)
    if np.any(dst < src):
        raise DimsTooSmall(f"target dims {tuple(dst)} smaller than source {tuple(src)}")
    return tuple(int(o) for o in (dst - src) // 2)


def pad_to(vol, dims):
    """Zero-pad to ``dims`` with the content centred; see :func:`pad_offset`."""
    ox, oy, oz = pad_offset(vol.dims, dims)
    out = np.zeros(_shape(dims), dtype=np.float32)
    nx, ny, nz = vol.dims
    out[oz : oz + nz, oy : oy + ny, ox : ox + nx] = vol.data
    return vol.with_data(out)


def crop(vol, offset, dims):
    ox, oy, oz = (int(o) for o in offset)
    nx, ny, nz = (int(d) for d in dims)
    return vol.with_data(vol.data[oz : oz + nz, oy : oy + ny, ox : ox + nx].copy())


def normalize_0_255(vol):
    lo = float(vol.data.min())
    hi = float(vol.data.max())
    if not hi > lo:
        raise ConstantVolume(f"cannot normalise a constant volume (value {lo})")
    out = (vol.data.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return vol.with_data(np.clip(out, 0.0, 255.0))


def invert_intensity(vol):
    return vol.with_data(255.0 - vol.data)


def gaussian_blur(vol, sigma):
    """Isotropic Gaussian blur, truncated at 3 sigma, mirrored boundary."""
    return vol.with_data(ndimage.gaussian_filter(vol.data.astype(np.float64), sigma, truncate=3.0, mode="reflect"))


def unsharp_mask(vol, sigma=5.0, weight=0.8):
    if sigma <= 0 or weight < 0:
        raise ValueError("unsharp_mask needs sigma > 0 and weight >= 0")
    if weight == 0:
        return vol.with_data(vol.data.copy())
    v = vol.data.astype(np.float64)
    blurred = ndimage.gaussian_filter(v, sigma, truncate=3.0, mode="reflect")
    return vol.with_data(np.clip(v + weight * (v - blurred), 0.0, 255.0))


def threshold(vol, tau, strict=True):
    data = vol.data if isinstance(vol, Volume) else np.asarray(vol)
    return data > tau if strict else data >= tau


def mask_apply(vol, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != vol.data.shape:
        raise DimsMismatch(f"mask shape {mask.shape} != volume shape {vol.data.shape}")
    return vol.with_data(np.where(mask, vol.data, np.float32(0.0)))


# ------------------------------------------------------------ morphology


def disk(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def binary_closing_2d(mask, radius=2):
    """Per-slice closing with a disk; pixels outside the slice count as background."""
    mask = np.asarray(mask, dtype=bool)
    r = int(radius)
    if r <= 0:
        return mask.copy()
    st = disk(r)[None]
    padded = np.pad(mask, ((0, 0), (r, r), (r, r)))
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, st), st)
    return closed[:, r:-r, r:-r]


_CROSS_2D = np.zeros((3, 3, 3), dtype=bool)
_CROSS_2D[1] = ndimage.generate_binary_structure(2, 1)
_FULL_2D = np.zeros((3, 3, 3), dtype=bool)
_FULL_2D[1] = True


def fill_holes_2d(mask):
    """Fill, slice by slice, background regions not 4-connected to the slice border."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool), _CROSS_2D)


def outline_2d(mask):
    """Mask minus its per-slice 3x3 (8-connected) erosion."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _FULL_2D, border_value=0)


def fill_holes_3d(mask):
    """Fill background components (6-connected) that do not touch the volume boundary."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))
