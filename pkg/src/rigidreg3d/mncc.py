"""Masked normalised cross-correlation over integer 3-D shifts.

A shift ``d = (dx, dy, dz)`` scores the overlap of ``v1[x]`` and
``v2[x + d]``: if volume 2 is volume 1 translated by ``d`` the peak sits at
``d``, and ``translation(-d)`` maps volume 2 back onto volume 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import transform as tf
from . import volume as vm
from ._accel import NUMBA_AVAILABLE
from .errors import AllInvalid, DimsMismatch
from .kernels import mncc as _mk

EPS = 1e-9
OVERLAP_FRACTION = 0.3


@dataclass
class CorrelationVolume:
    """Scores for every shift in a box ``[-w, w]`` per axis.

    ``scores`` and ``overlap`` have array shape ``(2wz+1, 2wy+1, 2wx+1)``;
    ``zero_shift_index`` is the ``(x, y, z)`` grid coordinate of shift 0, so a
    cell at array index ``(k, j, i)`` holds shift ``(i, j, k) - zero_shift_index``.
    Invalid cells carry NaN scores and ``valid == False``.
    """

    scores: np.ndarray
    overlap: np.ndarray
    valid: np.ndarray
    zero_shift_index: tuple

    def shift_of(self, index_zyx):
        k, j, i = index_zyx
        zx, zy, zz = self.zero_shift_index
        return (int(i - zx), int(j - zy), int(k - zz))

    def at(self, shift):
        dx, dy, dz = shift
        zx, zy, zz = self.zero_shift_index
        return self.scores[dz + zz, dy + zy, dx + zx]


def _arrays(v, m):
    a = v.data if isinstance(v, vm.Volume) else np.asarray(v)
    return np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(m, dtype=bool)


def overlap_floor(m1, m2, fraction=OVERLAP_FRACTION):
    return max(1.0, fraction * min(int(np.count_nonzero(m1)), int(np.count_nonzero(m2))))


def mncc_spatial(v1, m1, v2, m2, shift, overlap_fraction=OVERLAP_FRACTION, eps=EPS):
    """Direct evaluation at one shift ``(dx, dy, dz)``; ``None`` when undefined."""
    a, ma = _arrays(v1, m1)
    b, mb = _arrays(v2, m2)
    if a.shape != b.shape or ma.shape != a.shape or mb.shape != b.shape:
        raise DimsMismatch(f"shapes differ: {a.shape}, {b.shape}")
    dx, dy, dz = (int(s) for s in shift)
    fn = _mk.mncc_shift_numba if NUMBA_AVAILABLE else _mk.mncc_shift_numpy
    score, cnt = fn(a, ma, b, mb, dz, dy, dx, eps)
    if cnt < overlap_floor(ma, mb, overlap_fraction) or not np.isfinite(score):
        return None
    return float(score)


def _fft_shape(n, w):
    return sfft.next_fast_len(int(n + w), real=True)


def mncc_fft(v1, m1, v2, m2, window=None, overlap_fraction=OVERLAP_FRACTION, eps=EPS, workers=None):
    """MNCC at every shift at once, from six FFT cross-correlations.

    Parameters
    ----------
    v1, m1, v2, m2
        Volumes (or arrays) and boolean masks of identical shape.
    window : int or (wx, wy, wz), optional
        Largest absolute shift per axis. ``None`` searches every shift with
        non-empty overlap (``n - 1``). Each axis is zero-padded to at least
        ``n + w`` so no circular wrap-around enters the returned box.
    """
    a, ma = _arrays(v1, m1)
    b, mb = _arrays(v2, m2)
    if a.shape != b.shape or ma.shape != a.shape or mb.shape != b.shape:
        raise DimsMismatch(f"shapes differ: {a.shape}, {b.shape}")
    shape = a.shape
    if window is None:
        w = [n - 1 for n in shape]
    else:
        wxyz = np.broadcast_to(np.asarray(window, dtype=int), (3,))
        w = [min(int(wxyz[2 - ax]), shape[ax] - 1) for ax in range(3)]
    fshape = [_fft_shape(n, wi) for n, wi in zip(shape, w)]
    sel = np.ix_(*[np.r_[s - wi : s, 0 : wi + 1] for s, wi in zip(fshape, w)])

    def fwd(x):
        return sfft.rfftn(x, fshape, workers=workers)

    def corr(fa, fb):
        # c[d] = sum_x a[x] b[x + d]
        return sfft.irfftn(np.conj(fa) * fb, fshape, workers=workers)[sel]

    fm1 = fwd(ma.astype(np.float64))
    fm2 = fwd(mb.astype(np.float64))
    n_ov = np.rint(corr(fm1, fm2))
    a1 = np.where(ma, a, 0.0)
    b2 = np.where(mb, b, 0.0)
    f1 = fwd(a1)
    f2 = fwd(b2)
    s1 = corr(f1, fm2)
    s2 = corr(fm1, f2)
    s12 = corr(f1, f2)
    del f1, f2
    f11 = fwd(a1 * a1)
    s11 = corr(f11, fm2)
    del f11
    f22 = fwd(b2 * b2)
    s22 = corr(fm1, f22)
    del f22, fm1, fm2

    with np.errstate(divide="ignore", invalid="ignore"):
        safe_n = np.maximum(n_ov, 1.0)
        var1 = s11 - s1 * s1 / safe_n
        var2 = s22 - s2 * s2 / safe_n
        cov = s12 - s1 * s2 / safe_n
        valid = (
            (n_ov >= overlap_floor(ma, mb, overlap_fraction))
            & (var1 > eps * np.maximum(1.0, s11))
            & (var2 > eps * np.maximum(1.0, s22))
        )
        scores = np.where(valid, cov / np.sqrt(np.maximum(var1, 0.0) * np.maximum(var2, 0.0)), np.nan)
    np.clip(scores, -1.0, 1.0, out=scores)
    return CorrelationVolume(scores, n_ov.astype(np.int64), valid, (w[2], w[1], w[0]))


def find_peak(c, window=None):
    """Best valid shift ``(dx, dy, dz)`` and its score.

    Ties go to the lowest ``(dz, dy, dx)`` in lexicographic order. ``window``
    optionally restricts the search to ``|d| <= window`` per axis.
    """
    ok = c.valid.copy()
    if window is not None:
        wx, wy, wz = np.broadcast_to(np.asarray(window, dtype=int), (3,))
        zx, zy, zz = c.zero_shift_index
        kk, jj, ii = np.ogrid[: ok.shape[0], : ok.shape[1], : ok.shape[2]]
        ok &= (np.abs(ii - zx) <= wx) & (np.abs(jj - zy) <= wy) & (np.abs(kk - zz) <= wz)
    if not ok.any():
        raise AllInvalid("no valid correlation cell")
    flat = np.where(ok, c.scores, -np.inf).ravel()
    idx = int(np.argmax(flat))
    return c.shift_of(np.unravel_index(idx, ok.shape)), float(flat[idx])


@dataclass
class Stage2Config:
    unsharp_sigma: float = 5.0
    unsharp_weight: float = 0.8
    window: object = "auto"
    overlap_fraction: float = OVERLAP_FRACTION
    mask_threshold: float = 0.0

    def resolve_window(self, dims):
        if self.window == "auto":
            return tuple(max(1, int(d) // 4) for d in dims)
        if self.window is None or self.window == "full":
            return None
        return tuple(np.broadcast_to(np.asarray(self.window, dtype=int), (3,)).tolist())


def stage2_inputs(moving_aligned, fixed, cfg):
    """Masked, contrast-matched volumes ``(v1, h_f, v2, h_m)`` fed to the correlation."""
    h_f = vm.fill_holes_3d(vm.threshold(fixed, cfg.mask_threshold))
    h_m = vm.fill_holes_3d(vm.threshold(moving_aligned, cfg.mask_threshold))
    v1 = vm.mask_apply(vm.unsharp_mask(fixed, cfg.unsharp_sigma, cfg.unsharp_weight), h_f)
    v2 = vm.mask_apply(vm.invert_intensity(moving_aligned), h_m)
    return v1, h_f, v2, h_m


def stage2_refine(moving_aligned, fixed, cfg=None, workers=None):
    """Translation ``T2`` aligning the stage-1 output with the fixed volume."""
    cfg = cfg or Stage2Config()
    if moving_aligned.data.shape != fixed.data.shape:
        raise DimsMismatch("stage 2 needs volumes on a common grid")
    v1, h_f, v2, h_m = stage2_inputs(moving_aligned, fixed, cfg)
    window = cfg.resolve_window(fixed.dims)
    c = mncc_fft(v1, h_f, v2, h_m, window=window, overlap_fraction=cfg.overlap_fraction, workers=workers)
    shift, score = find_peak(c, window)
    return tf.translation(0.0 - np.asarray(shift, dtype=float)), score
