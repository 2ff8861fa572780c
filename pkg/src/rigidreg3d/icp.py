"""Local refinement: point-to-plane ICP with Gauss-Newton updates."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from . import transform as tf
from .ransac import RegistrationScore

log = logging.getLogger(__name__)

CYCLE_WINDOW = 16


@dataclass
class IcpParams:
    max_correspondence_distance: float = 16.0
    max_iterations: int = 2000
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.max_correspondence_distance <= 0:
            raise ValueError("max_correspondence_distance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IcpScore(RegistrationScore):
    loss: float = 0.0
    converged: bool = False
    no_correspondences: bool = False

    def as_dict(self):
        d = super().as_dict()
        d.update(loss=float(self.loss), converged=bool(self.converged))
        return d


def _correspond(tree, fixed_pts, fixed_nrm, moved, max_dist):
    d, j = tree.query(moved, k=1, distance_upper_bound=max_dist)
    hit = np.isfinite(d)
    return hit, j[hit], d[hit]


def point_to_plane_loss(moved, fixed_pts, fixed_nrm):
    r = np.einsum("ij,ij->i", fixed_nrm, fixed_pts - moved)
    return float(np.dot(r, r))


def _solve(A, b):
    try:
        return linalg.cho_solve(linalg.cho_factor(A), b)
    except linalg.LinAlgError:
        return linalg.cho_solve(linalg.cho_factor(A + 1e-9 * np.eye(6)), b)


def point_to_plane_icp(moving, fixed, init, params):
    """Refine ``init`` so that ``moving`` lies on the tangent planes of ``fixed``.

    Each iteration pairs every transformed moving point with its closest fixed
    point within ``max_correspondence_distance`` and takes one Gauss-Newton
    step on ``sum (n_i . (q_i - T p_i))^2`` with a small-angle rotation about
    the centroid of the paired points. Iteration stops once the update is
    below ``epsilon``, or when neither the inlier fraction nor the (relative)
    inlier RMSE moves by more than ``epsilon`` between iterations, or when the
    correspondence set repeats one from the last ``CYCLE_WINDOW`` iterations.

    Returns
    -------
    T : (4, 4) ndarray
        Refined transform (already includes ``init``).
    score : IcpScore
        Correspondence statistics and loss for the returned transform. When no
        pair exists at ``init`` the input is returned with zero fitness and
        ``no_correspondences`` set.
    """
    if fixed.normals is None:
        raise ValueError("fixed cloud needs normals")
    mpts = moving.points
    fpts = fixed.points
    fnrm = fixed.normals
    tree = cKDTree(fpts)
    dmax = params.max_correspondence_distance
    eps = params.epsilon
    T = np.array(init, dtype=float)

    converged = False
    it = 0
    prev = None
    seen = {}
    for it in range(1, params.max_iterations + 1):
        moved = tf.apply_points(T, mpts)
        hit, j, dist = _correspond(tree, fpts, fnrm, moved, dmax)
        if not hit.any():
            if it == 1:
                log.warning("icp: no correspondences within %.3g at init", dmax)
                return T, IcpScore(no_correspondences=True)
            break
        fit = hit.mean()
        rmse = np.sqrt(np.mean(dist**2))
        if prev is not None and abs(fit - prev[0]) < eps and abs(rmse - prev[1]) < eps * max(prev[1], 1.0):
            converged = True
            break
        prev = (fit, rmse)
        # identical pairings give identical steps: a repeat means a limit cycle
        key = hashlib.blake2b(np.packbits(hit).tobytes() + j.tobytes(), digest_size=16).digest()
        if key in seen and it - seen[key] <= CYCLE_WINDOW:
            converged = True
            break
        seen[key] = it
        p = moved[hit]
        q = fpts[j]
        nq = fnrm[j]
        c = p.mean(axis=0)
        pc = p - c
        J = np.hstack([np.cross(pc, nq), nq])
        r = np.einsum("ij,ij->i", nq, q - p)
        x = _solve(J.T @ J, J.T @ r)
        omega, t = x[:3], x[3:]
        step = np.eye(4)
        step[:3, :3] = tf.rodrigues(omega)
        step[:3, 3] = c + t - step[:3, :3] @ c
        T = tf.compose(step, T)
        T[:3, :3] = tf.orthonormalize(T[:3, :3])
        if np.linalg.norm(omega) < eps and np.linalg.norm(t) < eps:
            converged = True
            break

    moved = tf.apply_points(T, mpts)
    hit, j, d = _correspond(tree, fpts, fnrm, moved, dmax)
    count = int(hit.sum())
    score = IcpScore(
        inlier_count=count,
        fitness=count / len(mpts),
        rmse=float(np.sqrt(np.mean(d**2))) if count else 0.0,
        iterations=it,
        loss=point_to_plane_loss(moved[hit], fpts[j], fnrm[j]) if count else 0.0,
        converged=converged,
    )
    return T, score
