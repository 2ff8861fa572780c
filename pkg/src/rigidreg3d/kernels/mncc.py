"""Direct (spatial-domain) masked NCC at a single integer shift.

Convention: the score at shift ``d`` compares ``v1[x]`` with ``v2[x + d]``
over voxels where ``m1[x]`` and ``m2[x + d]`` are both set, so a copy of
``v1`` translated by ``d`` peaks at ``d``. Returns
``(score, overlap)``; ``score`` is NaN when a variance factor is too small.
"""

import numpy as np

from .._accel import njit


def _ranges(n, d):
    lo = max(0, d)
    hi = min(n, n + d)
    return lo, hi


@njit(cache=True)
def mncc_shift_numba(v1, m1, v2, m2, dz, dy, dx, eps):
    # loops below index v2 at x - d
    dz, dy, dx = -dz, -dy, -dx
    nz, ny, nx = v1.shape
    z0, z1 = max(0, dz), min(nz, nz + dz)
    y0, y1 = max(0, dy), min(ny, ny + dy)
    x0, x1 = max(0, dx), min(nx, nx + dx)
    cnt = 0
    s1 = 0.0
    s2 = 0.0
    for z in range(z0, z1):
        for y in range(y0, y1):
            for x in range(x0, x1):
                if m1[z, y, x] and m2[z - dz, y - dy, x - dx]:
                    cnt += 1
                    s1 += v1[z, y, x]
                    s2 += v2[z - dz, y - dy, x - dx]
    if cnt == 0:
        return np.nan, 0
    mu1 = s1 / cnt
    mu2 = s2 / cnt
    c12 = 0.0
    c11 = 0.0
    c22 = 0.0
    q11 = 0.0
    q22 = 0.0
    for z in range(z0, z1):
        for y in range(y0, y1):
            for x in range(x0, x1):
                if m1[z, y, x] and m2[z - dz, y - dy, x - dx]:
                    a = v1[z, y, x]
                    b = v2[z - dz, y - dy, x - dx]
                    c12 += (a - mu1) * (b - mu2)
                    c11 += (a - mu1) * (a - mu1)
                    c22 += (b - mu2) * (b - mu2)
                    q11 += a * a
                    q22 += b * b
    if c11 <= eps * max(1.0, q11) or c22 <= eps * max(1.0, q22):
        return np.nan, cnt
    return c12 / np.sqrt(c11 * c22), cnt


def mncc_shift_numpy(v1, m1, v2, m2, dz, dy, dx, eps):
    dz, dy, dx = -dz, -dy, -dx
    nz, ny, nx = v1.shape
    z0, z1 = _ranges(nz, dz)
    y0, y1 = _ranges(ny, dy)
    x0, x1 = _ranges(nx, dx)
    a = v1[z0:z1, y0:y1, x0:x1]
    b = v2[z0 - dz : z1 - dz, y0 - dy : y1 - dy, x0 - dx : x1 - dx]
    m = m1[z0:z1, y0:y1, x0:x1] & m2[z0 - dz : z1 - dz, y0 - dy : y1 - dy, x0 - dx : x1 - dx]
    cnt = int(m.sum())
    if cnt == 0:
        return np.nan, 0
    a = a[m].astype(np.float64)
    b = b[m].astype(np.float64)
    ac = a - a.mean()
    bc = b - b.mean()
    c11 = float(ac @ ac)
    c22 = float(bc @ bc)
    if c11 <= eps * max(1.0, float(a @ a)) or c22 <= eps * max(1.0, float(b @ b)):
        return np.nan, cnt
    return float(ac @ bc) / np.sqrt(c11 * c22), cnt
