"""Global registration: feature-matched RANSAC over 3-point samples."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import transform as tf
from .errors import DegenerateConfiguration, NoValidModel

log = logging.getLogger(__name__)

_BLOCK = 1024


@dataclass
class RansacParams:
    iterations: int = 2_500_000
    sample_size: int = 3
    inlier_distance: float = 30.0
    confidence: float = 0.999
    seed: int = 0
    edge_similarity: float = 0.9

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_distance <= 0:
            raise ValueError("inlier_distance must be > 0")
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError("confidence must lie in (0, 1]")
        if self.sample_size != 3:
            raise ValueError("only 3-point samples are supported")


@dataclass
class RegistrationScore:
    inlier_count: int = 0
    fitness: float = 0.0
    rmse: float = 0.0
    iterations: int = 0

    def as_dict(self):
        return {
            "inlier_count": int(self.inlier_count),
            "fitness": float(self.fitness),
            "rmse": float(self.rmse),
            "iterations": int(self.iterations),
        }


def _block_samples(seed, block, n):
    """Sample triples for iterations ``[block*_BLOCK, (block+1)*_BLOCK)``.

    Each block draws from its own stream keyed by ``(seed, block)``, so the
    triple used at a given iteration never depends on how the run is scheduled.
    """
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, block])
    return np.minimum((rng.random((_BLOCK, 3)) * n).astype(np.int64), n - 1)


def score_transform(T, moving_pts, fixed_tree, max_distance):
    d, _ = fixed_tree.query(tf.apply_points(T, moving_pts), k=1, distance_upper_bound=max_distance)
    hit = np.isfinite(d)
    count = int(hit.sum())
    rmse = float(np.sqrt(np.mean(d[hit] ** 2))) if count else 0.0
    return RegistrationScore(count, count / len(moving_pts), rmse)


def _edges_ok(a, b, ratio):
    for i, j in ((0, 1), (1, 2), (0, 2)):
        la = np.linalg.norm(a[i] - a[j])
        lb = np.linalg.norm(b[i] - b[j])
        hi = max(la, lb)
        if hi == 0.0 or min(la, lb) < ratio * hi:
            return False
    return True


def ransac_register(moving, fixed, params, prior=None):
    """Estimate the rigid transform taking ``moving`` onto ``fixed``.

    Parameters
    ----------
    moving, fixed : FeatureCloud
        Descriptor clouds. ``moving`` is expected to be centre-aligned already.
    params : RansacParams
    prior : (4, 4) array_like, optional
        Transform already applied to the moving coordinates (the centring
        translation); the result is composed with it.

    Returns
    -------
    T : (4, 4) ndarray
        Hypothesis with the most moving points within ``inlier_distance`` of
        the fixed cloud; ties keep the earliest iteration.
    score : RegistrationScore
    """
    mpts = moving.cloud.points
    fpts = fixed.cloud.points
    n = len(mpts)
    if n < 3 or len(fpts) < 3:
        raise NoValidModel("both clouds need at least 3 points")
    _, corr = cKDTree(fixed.descriptors).query(moving.descriptors, k=1)
    fixed_tree = cKDTree(fpts)
    corr_dst = fpts[corr]
    d_in = params.inlier_distance

    best_T = None
    best = RegistrationScore()
    best_corr_ratio = 0.0
    needed = params.iterations
    evaluated = 0
    it = 0
    while it < min(params.iterations, needed):
        block = it // _BLOCK
        samples = _block_samples(params.seed, block, n)
        stop = min(params.iterations, (block + 1) * _BLOCK)
        for idx in samples[it - block * _BLOCK : stop - block * _BLOCK]:
            it += 1
            if idx[0] == idx[1] or idx[1] == idx[2] or idx[0] == idx[2]:
                continue
            src = mpts[idx]
            dst = corr_dst[idx]
            if not _edges_ok(src, dst, params.edge_similarity):
                continue
            try:
                T = tf.umeyama_fit(src, dst)
            except DegenerateConfiguration:
                continue
            evaluated += 1
            sc = score_transform(T, mpts, fixed_tree, d_in)
            if sc.inlier_count > best.inlier_count or best_T is None:
                best_T, best = T, sc
                if params.confidence < 1.0:
                    resid = np.linalg.norm(tf.apply_points(T, mpts) - corr_dst, axis=1)
                    best_corr_ratio = float(np.mean(resid <= d_in))
                    needed = _required_iterations(best_corr_ratio, params.confidence)
            if it >= needed:
                break
    if best_T is None:
        raise NoValidModel(f"all {it} sampled triples were degenerate")
    best.iterations = it
    log.debug("ransac: %d iterations, %d hypotheses, fitness %.4f", it, evaluated, best.fitness)
    if prior is not None:
        best_T = tf.compose(best_T, prior)
    return best_T, best


def _required_iterations(inlier_ratio, confidence):
    w3 = inlier_ratio**3
    if w3 <= 0.0:
        return math.inf
    if w3 >= 1.0:
        return 1
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - w3))
