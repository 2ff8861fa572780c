"""FPFH descriptors and exact nearest-neighbour search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._accel import NUMBA_AVAILABLE
from .errors import EmptyIndex
from .kernels import fpfh as _fk
from .surface import PointCloud

DESCRIPTOR_DIM = 3 * _fk.NBINS


class SpatialIndex:
    """Exact k-d tree over ``(N, D)`` vectors (3-D points or 33-D descriptors)."""

    def __init__(self, data, workers=1):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] == 0:
            raise EmptyIndex("cannot index an empty set")
        self.workers = workers
        self._tree = cKDTree(self.data, balanced_tree=True)

    def __len__(self):
        return self.data.shape[0]

    def query(self, q, k=1, distance_upper_bound=np.inf):
        return self._tree.query(q, k=k, distance_upper_bound=distance_upper_bound, workers=self.workers)


def nn_query(index, q, k=1):
    """Indices of the ``k`` nearest indexed vectors to ``q``, nearest first."""
    if index is None or len(index) == 0:
        raise EmptyIndex("index is empty")
    k = min(int(k), len(index))
    _, idx = index.query(np.asarray(q, dtype=np.float64), k=k)
    return np.atleast_1d(idx)


@dataclass
class FeatureCloud:
    descriptors: np.ndarray
    cloud: PointCloud

    def __len__(self):
        return self.descriptors.shape[0]


def radius_neighbors(points, radius, max_nn, chunk=4096):
    """CSR neighbourhoods: up to ``max_nn`` nearest points within ``radius``.

    Zero-distance neighbours (the point itself and exact duplicates) are
    dropped. Ties in distance are broken by point index.
    """
    tree = cKDTree(points)
    n = points.shape[0]
    kq = min(n, 2 * int(max_nn) + 1)
    indptr = [0]
    idx_parts = []
    dist_parts = []
    for s in range(0, n, chunk):
        d, idx = tree.query(points[s : s + chunk], k=kq, distance_upper_bound=radius)
        d = d.reshape(-1, kq)
        idx = idx.reshape(-1, kq)
        valid = np.isfinite(d) & (d > 0)
        key = np.where(valid, np.round(d * d, 6), np.inf)
        order = np.lexsort((idx, key), axis=1)[:, : int(max_nn)]
        d = np.take_along_axis(d, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        valid = np.take_along_axis(valid, order, axis=1)
        counts = valid.sum(axis=1)
        idx_parts.append(idx[valid])
        dist_parts.append(d[valid])
        indptr.extend((indptr[-1] + np.cumsum(counts)).tolist())
    return (
        np.asarray(indptr, dtype=np.int64),
        np.concatenate(idx_parts).astype(np.int64) if idx_parts else np.zeros(0, np.int64),
        np.concatenate(dist_parts) if dist_parts else np.zeros(0),
    )


def compute_fpfh(cloud, radius, max_nn):
    """33-bin FPFH descriptor for every point of an oriented cloud.

    Each 11-bin block (alpha, phi, theta) of a descriptor sums to 100, or the
    whole descriptor is zero when the point has no neighbour within ``radius``.
    """
    if cloud.normals is None:
        raise ValueError("compute_fpfh needs a cloud with normals")
    if radius <= 0 or max_nn < 1:
        raise ValueError("radius must be > 0 and max_nn >= 1")
    pts = cloud.points
    nrm = cloud.normals
    indptr, indices, dists = radius_neighbors(pts, radius, max_nn)
    if NUMBA_AVAILABLE:
        spfh = _fk.spfh_numba(pts, nrm, indptr, indices)
        desc = _fk.fpfh_numba(spfh, indptr, indices, dists)
    else:
        spfh = _fk.spfh_numpy(pts, nrm, indptr, indices)
        desc = _fk.fpfh_numpy(spfh, indptr, indices, dists)
    return FeatureCloud(desc, cloud)
