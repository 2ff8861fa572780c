"""FPFH histogram kernels.

Neighbourhoods arrive in CSR form (``indptr``, ``indices``, ``dists``) with
zero-distance entries already removed. Bin layout of the 33-vector:
``alpha`` in 0..10, ``phi`` in 11..21, ``theta`` in 22..32.
"""

import numpy as np
from scipy import sparse

from .._accel import njit, prange

NBINS = 11
SWAP_TOL = 1e-12
DEGENERATE_TOL = 1e-12


@njit(cache=True)
def _pair_bins(p1, n1, p2, n2):
    dx = p2[0] - p1[0]
    dy = p2[1] - p1[1]
    dz = p2[2] - p1[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    alpha = 0.0
    phi = 0.0
    theta = 0.0
    if dist > 0.0:
        dx /= dist
        dy /= dist
        dz /= dist
        a1 = n1[0] * dx + n1[1] * dy + n1[2] * dz
        a2 = n2[0] * dx + n2[1] * dy + n2[2] * dz
        ux, uy, uz = n1[0], n1[1], n1[2]
        tx, ty, tz = n2[0], n2[1], n2[2]
        if abs(a1) < abs(a2) - SWAP_TOL:
            ux, uy, uz = n2[0], n2[1], n2[2]
            tx, ty, tz = n1[0], n1[1], n1[2]
            dx, dy, dz = -dx, -dy, -dz
            phi = -a2
        else:
            phi = a1
        vx = dy * uz - dz * uy
        vy = dz * ux - dx * uz
        vz = dx * uy - dy * ux
        vn = np.sqrt(vx * vx + vy * vy + vz * vz)
        if vn > DEGENERATE_TOL:
            vx /= vn
            vy /= vn
            vz /= vn
            wx = uy * vz - uz * vy
            wy = uz * vx - ux * vz
            wz = ux * vy - uy * vx
            alpha = vx * tx + vy * ty + vz * tz
            theta = np.arctan2(wx * tx + wy * ty + wz * tz, ux * tx + uy * ty + uz * tz)
            if theta < -np.pi + 1e-9:
                theta = np.pi
        else:
            phi = 0.0
    ba = int(np.floor(NBINS * (alpha + 1.0) * 0.5))
    bp = int(np.floor(NBINS * (phi + 1.0) * 0.5))
    bt = int(np.floor(NBINS * (theta + np.pi) / (2.0 * np.pi)))
    ba = min(max(ba, 0), NBINS - 1)
    bp = min(max(bp, 0), NBINS - 1)
    bt = min(max(bt, 0), NBINS - 1)
    return ba, NBINS + bp, 2 * NBINS + bt


@njit(parallel=True, cache=True)
def spfh_numba(points, normals, indptr, indices):
    n = points.shape[0]
    out = np.zeros((n, 3 * NBINS))
    for i in prange(n):
        s = indptr[i]
        e = indptr[i + 1]
        if e == s:
            continue
        inc = 100.0 / (e - s)
        for jj in range(s, e):
            j = indices[jj]
            b0, b1, b2 = _pair_bins(points[i], normals[i], points[j], normals[j])
            out[i, b0] += inc
            out[i, b1] += inc
            out[i, b2] += inc
    return out


@njit(parallel=True, cache=True)
def fpfh_numba(spfh, indptr, indices, dists):
    n = spfh.shape[0]
    out = np.zeros_like(spfh)
    for i in prange(n):
        s = indptr[i]
        e = indptr[i + 1]
        for b in range(3 * NBINS):
            out[i, b] = spfh[i, b]
        if e > s:
            inv_k = 1.0 / (e - s)
            for jj in range(s, e):
                w = inv_k / dists[jj]
                j = indices[jj]
                for b in range(3 * NBINS):
                    out[i, b] += w * spfh[j, b]
        for h in range(3):
            tot = 0.0
            for b in range(h * NBINS, (h + 1) * NBINS):
                tot += out[i, b]
            if tot > 0.0:
                for b in range(h * NBINS, (h + 1) * NBINS):
                    out[i, b] *= 100.0 / tot
    return out


def pair_bins_numpy(p1, n1, p2, n2):
    """Vectorised twin of ``_pair_bins`` over ``(E, 3)`` arrays."""
    d = p2 - p1
    dist = np.linalg.norm(d, axis=1)
    d = d / np.where(dist > 0, dist, 1.0)[:, None]
    a1 = np.einsum("ij,ij->i", n1, d)
    a2 = np.einsum("ij,ij->i", n2, d)
    swap = np.abs(a1) < np.abs(a2) - SWAP_TOL
    u = np.where(swap[:, None], n2, n1)
    t = np.where(swap[:, None], n1, n2)
    d = np.where(swap[:, None], -d, d)
    phi = np.where(swap, -a2, a1)
    v = np.cross(d, u)
    vn = np.linalg.norm(v, axis=1)
    ok = (vn > DEGENERATE_TOL) & (dist > 0)
    v = v / np.where(ok, vn, 1.0)[:, None]
    w = np.cross(u, v)
    alpha = np.where(ok, np.einsum("ij,ij->i", v, t), 0.0)
    theta = np.arctan2(np.einsum("ij,ij->i", w, t), np.einsum("ij,ij->i", u, t))
    theta = np.where(theta < -np.pi + 1e-9, np.pi, theta)
    theta = np.where(ok, theta, 0.0)
    phi = np.where(ok, phi, 0.0)
    ba = np.clip(np.floor(NBINS * (alpha + 1.0) * 0.5).astype(np.int64), 0, NBINS - 1)
    bp = np.clip(np.floor(NBINS * (phi + 1.0) * 0.5).astype(np.int64), 0, NBINS - 1)
    bt = np.clip(np.floor(NBINS * (theta + np.pi) / (2 * np.pi)).astype(np.int64), 0, NBINS - 1)
    return ba, NBINS + bp, 2 * NBINS + bt


def spfh_numpy(points, normals, indptr, indices):
    n = points.shape[0]
    counts = np.diff(indptr)
    src = np.repeat(np.arange(n), counts)
    inc = np.repeat(100.0 / np.maximum(counts, 1), counts)
    out = np.zeros(n * 3 * NBINS)
    for b in pair_bins_numpy(points[src], normals[src], points[indices], normals[indices]):
        out += np.bincount(src * 3 * NBINS + b, weights=inc, minlength=out.size)
    return out.reshape(n, 3 * NBINS)


def fpfh_numpy(spfh, indptr, indices, dists):
    n = spfh.shape[0]
    counts = np.diff(indptr)
    weights = np.repeat(1.0 / np.maximum(counts, 1), counts) / dists
    W = sparse.csr_matrix((weights, indices, indptr), shape=(n, n))
    out = spfh + W @ spfh
    for h in range(3):
        block = out[:, h * NBINS : (h + 1) * NBINS]
        tot = block.sum(axis=1, keepdims=True)
        np.divide(block * 100.0, tot, out=block, where=tot > 0)
    return out
