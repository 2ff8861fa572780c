"""Rigid resampling kernels (nearest, trilinear, tricubic Catmull-Rom).

Both paths take the affine map ``src_coord = A @ (x, y, z) + b`` from output
voxel indices to source voxel coordinates, zero-extend the source beyond its
bounds, and produce identical results up to floating-point summation order.
"""

import numpy as np

from .._accel import njit, prange

ORDERS = {"nearest": 0, "linear": 1, "cubic": 3}


@njit(cache=True)
def _weights(order, c, w):
    """Tap weights for fractional coordinate ``c``; returns the first tap index."""
    if order == 0:
        i0 = int(np.floor(c + 0.5))
        w[0] = 1.0
        return i0
    i = int(np.floor(c))
    t = c - i
    if order == 1:
        w[0] = 1.0 - t
        w[1] = t
        return i
    t2 = t * t
    t3 = t2 * t
    w[0] = 0.5 * (-t3 + 2.0 * t2 - t)
    w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w[3] = 0.5 * (t3 - t2)
    return i - 1


@njit(parallel=True, cache=True)
def resample_numba(src, A, b, out_shape, order):
    nz, ny, nx = out_shape[0], out_shape[1], out_shape[2]
    sz, sy, sx = src.shape
    out = np.zeros((nz, ny, nx), dtype=np.float32)
    ntap = 1 if order == 0 else (2 if order == 1 else 4)
    for k in prange(nz):
        wx = np.empty(4)
        wy = np.empty(4)
        wz = np.empty(4)
        for j in range(ny):
            for i in range(nx):
                cx = A[0, 0] * i + A[0, 1] * j + A[0, 2] * k + b[0]
                cy = A[1, 0] * i + A[1, 1] * j + A[1, 2] * k + b[1]
                cz = A[2, 0] * i + A[2, 1] * j + A[2, 2] * k + b[2]
                ix = _weights(order, cx, wx)
                iy = _weights(order, cy, wy)
                iz = _weights(order, cz, wz)
                if ix + ntap <= 0 or iy + ntap <= 0 or iz + ntap <= 0:
                    continue
                if ix >= sx or iy >= sy or iz >= sz:
                    continue
                acc = 0.0
                for c in range(ntap):
                    zz = iz + c
                    if zz < 0 or zz >= sz:
                        continue
                    for bb in range(ntap):
                        yy = iy + bb
                        if yy < 0 or yy >= sy:
                            continue
                        wzy = wz[c] * wy[bb]
                        for a in range(ntap):
                            xx = ix + a
                            if xx < 0 or xx >= sx:
                                continue
                            acc += wzy * wx[a] * src[zz, yy, xx]
                out[k, j, i] = acc
    return out


def _np_weights(order, c):
    if order == 0:
        return np.floor(c + 0.5).astype(np.int64), [np.ones_like(c)]
    i = np.floor(c)
    t = c - i
    i = i.astype(np.int64)
    if order == 1:
        return i, [1.0 - t, t]
    t2 = t * t
    t3 = t2 * t
    return i - 1, [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]


def resample_numpy(src, A, b, out_shape, order, slab=8):
    nz, ny, nx = out_shape
    sz, sy, sx = src.shape
    flat = src.ravel()
    out = np.zeros((nz, ny, nx), dtype=np.float32)
    jj, ii = np.meshgrid(np.arange(ny, dtype=float), np.arange(nx, dtype=float), indexing="ij")
    for k0 in range(0, nz, slab):
        k1 = min(nz, k0 + slab)
        kk = np.arange(k0, k1, dtype=float)[:, None, None]
        cx = A[0, 0] * ii + A[0, 1] * jj + A[0, 2] * kk + b[0]
        cy = A[1, 0] * ii + A[1, 1] * jj + A[1, 2] * kk + b[1]
        cz = A[2, 0] * ii + A[2, 1] * jj + A[2, 2] * kk + b[2]
        ix, wx = _np_weights(order, cx)
        iy, wy = _np_weights(order, cy)
        iz, wz = _np_weights(order, cz)
        acc = np.zeros(cx.shape)
        for c, wzc in enumerate(wz):
            zz = iz + c
            vz = (zz >= 0) & (zz < sz)
            for bb, wyb in enumerate(wy):
                yy = iy + bb
                vzy = vz & (yy >= 0) & (yy < sy)
                wzy = wzc * wyb
                for a, wxa in enumerate(wx):
                    xx = ix + a
                    valid = vzy & (xx >= 0) & (xx < sx)
                    idx = (np.clip(zz, 0, sz - 1) * sy + np.clip(yy, 0, sy - 1)) * sx + np.clip(xx, 0, sx - 1)
                    acc += np.where(valid, wzy * wxa * flat[idx], 0.0)
        out[k0:k1] = acc
    return out
