"""Surface point clouds: extraction from masks, normals, centring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import transform as tf
from . import volume as vm
from .errors import EmptySurface

DEFAULT_NORMAL_K = 30


@dataclass
class PointCloud:
    """Points ``(N, 3)`` in voxel units, ``(x, y, z)`` order, with optional unit normals.

    ``degenerate`` flags points whose neighbourhood covariance had rank < 2;
    their normal is set to ``(0, 0, 1)``.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must match points in shape")

    def __len__(self):
        return self.points.shape[0]

    @property
    def centroid(self):
        return self.points.mean(axis=0)

    def transformed(self, T):
        normals = None if self.normals is None else self.normals @ np.asarray(T)[:3, :3].T
        return PointCloud(tf.apply_points(T, self.points), normals, self.degenerate)

    def subset(self, idx):
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.degenerate is None else self.degenerate[idx],
        )


def surface_mask(mask, closing_radius=2):
    m = vm.binary_closing_2d(mask, closing_radius)
    return vm.outline_2d(vm.fill_holes_2d(m))


def extract_surface(mask, closing_radius=2):
    """Per-slice contour voxels of the closed, hole-filled mask."""
    zz, yy, xx = np.nonzero(surface_mask(mask, closing_radius))
    if xx.size == 0:
        raise EmptySurface("mask has no surface voxels")
    return PointCloud(np.column_stack([xx, yy, zz]).astype(np.float64))


def stable_knn(tree, points, k):
    """k nearest neighbours with ties broken by index, not by traversal order.

    Squared distances are rounded to 1e-6 before ranking, so the selected
    neighbourhoods of an integer-lattice cloud survive a rigid motion unchanged.
    """
    n = tree.n
    kq = min(n, 2 * k)
    d, idx = tree.query(points, k=kq)
    d = d.reshape(len(points), kq)
    idx = idx.reshape(len(points), kq)
    key = np.round(d * d, 6)
    order = np.lexsort((idx, key), axis=1)
    return np.take_along_axis(idx, order, axis=1)[:, :k]


def estimate_normals(cloud, k=DEFAULT_NORMAL_K):
    """PCA normals over the k-NN neighbourhood, oriented away from the centroid."""
    pts = cloud.points
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(pts) < k:
        raise ValueError(f"cloud has {len(pts)} points, fewer than k={k}")
    nbr = stable_knn(cKDTree(pts), pts, k)
    nb = pts[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = evals[:, 1] <= 1e-10 * scale
    normals[degenerate] = (0.0, 0.0, 1.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    s = np.einsum("ij,ij->i", normals, pts - pts.mean(axis=0))
    normals[s < 0] *= -1.0
    return PointCloud(pts, normals, degenerate)


def center_align(moving, fixed):
    """Pure translation taking the centroid of ``moving`` onto that of ``fixed``."""
    return tf.translation(fixed.centroid - moving.centroid)


def voxel_downsample(cloud, size):
    """Replace the points in each ``size``-voxel cell by their mean (order: sorted cell key)."""
    if size is None or size <= 1:
        return PointCloud(cloud.points.copy())
    cells = np.floor(cloud.points / size).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inverse, cloud.points)
    return PointCloud(sums / counts[:, None])


def save_xyz(cloud, path):
    arr = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    np.savetxt(path, arr, fmt="%.17g")


def load_xyz(path):
    arr = np.loadtxt(path, ndmin=2)
    if arr.shape[1] == 6:
        return PointCloud(arr[:, :3], arr[:, 3:])
    if arr.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 or 6 columns, got {arr.shape[1]}")
    return PointCloud(arr)
