"""Landmark ground truth and registration metrics (LMD, LM fitness, pose errors)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import transform as tf
from .errors import DegenerateConfiguration, FormatError

CSV_COLUMNS = ("mx", "my", "mz", "fx", "fy", "fz")
DEFAULT_TAU_UM = 12.0


@dataclass
class LandmarkSet:
    """Corresponding landmark pairs in voxel coordinates.

    ``voxel_size`` (micrometres per voxel) is a scalar or ``(sx, sy, sz)``.
    """

    moving: np.ndarray
    fixed: np.ndarray
    voxel_size: object = 1.0

    def __post_init__(self):
        self.moving = np.asarray(self.moving, dtype=np.float64).reshape(-1, 3)
        self.fixed = np.asarray(self.fixed, dtype=np.float64).reshape(-1, 3)
        if self.moving.shape != self.fixed.shape:
            raise ValueError("moving and fixed landmark arrays differ in shape")

    def __len__(self):
        return self.moving.shape[0]

    @property
    def scale(self):
        return np.broadcast_to(np.asarray(self.voxel_size, dtype=float), (3,))

    def distances_um(self, T):
        return np.linalg.norm((tf.apply_points(T, self.moving) - self.fixed) * self.scale, axis=1)

    def check_spacing(self, min_um=100.0):
        """Raise if any landmark lies within ``min_um`` of another in the same set (strict mode)."""
        for name, pts in (("moving", self.moving), ("fixed", self.fixed)):
            p = pts * self.scale
            d = np.linalg.norm(p[:, None] - p[None], axis=2)
            np.fill_diagonal(d, np.inf)
            if len(p) > 1 and d.min() <= min_um:
                raise DegenerateConfiguration(
                    f"{name} landmarks closer than {min_um} um (min spacing {d.min():.3f} um)"
                )


def landmark_distance(lms, T):
    """Mean post-transform landmark distance in micrometres."""
    if len(lms) == 0:
        raise ValueError("empty landmark set")
    return float(lms.distances_um(T).mean())


def landmark_fitness(lms, T, tau_um=DEFAULT_TAU_UM):
    """Fraction of pairs whose post-transform distance is at most ``tau_um``."""
    if len(lms) == 0:
        raise ValueError("empty landmark set")
    return float(np.mean(lms.distances_um(T) <= tau_um))


def _umeyama_batch(src, dst):
    """Vectorised Umeyama over ``(B, K, 3)`` batches; returns ``R``, ``t``, non-degenerate flags."""
    ms = src.mean(axis=1, keepdims=True)
    md = dst.mean(axis=1, keepdims=True)
    xs = src - ms
    xd = dst - md
    sv = np.linalg.svd(xs, compute_uv=False)
    ok = sv[:, 1] > 1e-9 * np.maximum(sv[:, 0], 1e-300)
    U, _, Vt = np.linalg.svd(np.einsum("bki,bkj->bij", xd, xs))
    d = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    d[d == 0] = 1.0
    U[:, :, 2] *= d[:, None]
    R = U @ Vt
    t = md[:, 0] - np.einsum("bij,bj->bi", R, ms[:, 0])
    return R, t, ok


def landmark_ransac_gt(lms, iterations=100_000, inlier_tau_um=DEFAULT_TAU_UM, seed=0, batch=4096):
    """Ground-truth transform from landmark pairs by 3-point RANSAC.

    The hypothesis with the most pairs within ``inlier_tau_um`` wins (earliest
    on ties) and is re-fitted by least squares on its inlier set.
    """
    n = len(lms)
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 landmark pairs, got {n}")
    rng = np.random.default_rng(seed)
    scale = lms.scale
    best_count, best_inliers = -1, None
    done = 0
    while done < iterations:
        b = min(batch, iterations - done)
        idx = np.argsort(rng.random((b, n)), axis=1)[:, :3] if n > 3 else np.tile(np.arange(3), (b, 1))
        R, t, ok = _umeyama_batch(lms.moving[idx], lms.fixed[idx])
        moved = np.einsum("bij,nj->bni", R, lms.moving) + t[:, None, :]
        dist = np.linalg.norm((moved - lms.fixed[None]) * scale, axis=2)
        inl = (dist <= inlier_tau_um) & ok[:, None]
        counts = np.where(ok, inl.sum(axis=1), -1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_inliers = int(counts[k]), inl[k]
        done += b
        if n == 3:
            break
    if best_count < 0:
        raise DegenerateConfiguration("every sampled landmark triple is collinear")
    sel = best_inliers if best_count >= 3 else np.ones(n, dtype=bool)
    return tf.umeyama_fit(lms.moving[sel], lms.fixed[sel])


def metrics_report(T, lms, gt=None, tau_um=DEFAULT_TAU_UM, gt_seed=0):
    """The four evaluation metrics; ``gt`` defaults to the landmark RANSAC fit."""
    if gt is None:
        gt = landmark_ransac_gt(lms, inlier_tau_um=tau_um, seed=gt_seed)
    return {
        "lmd_um": landmark_distance(lms, T),
        "lm_fitness": landmark_fitness(lms, T, tau_um),
        "rot_err_deg": tf.rotation_error(T, gt),
        "trans_err_um": tf.translation_error(T, gt, lms.scale),
    }


def save_landmarks(lms, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for m, f in zip(lms.moving, lms.fixed):
            w.writerow([repr(float(v)) for v in (*m, *f)])


def load_landmarks(path, voxel_size=1.0):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_COLUMNS:
        raise FormatError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    try:
        arr = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric landmark entry") from exc
    if arr.size == 0 or arr.ndim != 2 or arr.shape[1] != 6:
        raise FormatError(f"{path}: expected rows of 6 values")
    return LandmarkSet(arr[:, :3], arr[:, 3:], voxel_size)
