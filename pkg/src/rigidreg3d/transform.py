"""Rigid 3D transforms as plain 4x4 ``numpy`` arrays.

A rigid transform maps a point ``p`` (voxel units, ``(x, y, z)`` order) to
``R @ p + t``. Composition follows matrix order: ``compose(a, b)`` applies
``b`` first.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DegenerateConfiguration, FormatError

ORTHO_TOL = 1e-9


def identity():
    return np.eye(4)


def translation(tx, ty=None, tz=None):
    if ty is None:
        tx, ty, tz = tx
    T = np.eye(4)
    T[:3, 3] = (tx, ty, tz)
    return T


def axis_angle(axis, angle_deg):
    """Rotation about ``axis`` (through the origin) by ``angle_deg`` degrees."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    T = np.eye(4)
    T[:3, :3] = rodrigues(axis * np.deg2rad(angle_deg))
    return T


def rotation_z(angle_deg):
    return axis_angle((0.0, 0.0, 1.0), angle_deg)


def about_center(T, center):
    """Re-express ``T`` so that its rotation pivots on ``center`` instead of the origin."""
    c = np.asarray(center, dtype=float)
    return translation(c) @ T @ translation(-c)


def rodrigues(omega):
    """Rotation matrix for the rotation vector ``omega`` (radians)."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = np.array(
        [
            [0.0, -omega[2], omega[1]],
            [omega[2], 0.0, -omega[0]],
            [-omega[1], omega[0], 0.0],
        ]
    )
    if theta < 1e-12:
        # second-order series keeps the result orthonormal to ~1e-24
        return np.eye(3) + K + 0.5 * K @ K
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def orthonormalize(R):
    """Closest proper rotation to ``R`` (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def orthogonality_error(T):
    R = np.asarray(T)[:3, :3]
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def is_rigid(T, tol=ORTHO_TOL):
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
        return False
    return orthogonality_error(T) < tol and np.linalg.det(T[:3, :3]) > 0


def _guard(T):
    T[3] = (0.0, 0.0, 0.0, 1.0)
    if orthogonality_error(T) > ORTHO_TOL:
        T[:3, :3] = orthonormalize(T[:3, :3])
    return T


def compose(a, b):
    """Transform applying ``b`` first, then ``a``."""
    return _guard(np.asarray(a, dtype=float) @ np.asarray(b, dtype=float))


def invert(T):
    T = np.asarray(T, dtype=float)
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def apply_point(T, p):
    T = np.asarray(T, dtype=float)
    return T[:3, :3] @ np.asarray(p, dtype=float) + T[:3, 3]


def apply_points(T, pts):
    """Apply ``T`` to an ``(N, 3)`` array of points."""
    T = np.asarray(T, dtype=float)
    return np.asarray(pts, dtype=float) @ T[:3, :3].T + T[:3, 3]


def umeyama_fit(src, dst):
    """Least-squares rigid transform (no scale) taking ``src`` onto ``dst``.

    Parameters
    ----------
    src, dst : (N, 3) array_like
        Corresponding points, ``N >= 3``, not all collinear.

    Returns
    -------
    (4, 4) ndarray
        ``T`` minimising ``sum ||dst_i - (R src_i + t)||^2`` with ``det(R) = +1``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DegenerateConfiguration(f"shape mismatch: {src.shape} vs {dst.shape}")
    if src.shape[0] < 3:
        raise DegenerateConfiguration(f"need at least 3 points, got {src.shape[0]}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfiguration("source points are collinear")
    cov = xd.T @ xs / src.shape[0]
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    T = np.eye(4)
    T[:3, :3] = U @ S @ Vt
    T[:3, 3] = mu_d - T[:3, :3] @ mu_s
    return T


def rotation_angle(T):
    """Geodesic rotation angle of ``T`` in degrees."""
    c = (np.trace(np.asarray(T)[:3, :3]) - 1.0) / 2.0
    return float(np.rad2deg(np.arccos(np.clip(c, -1.0, 1.0))))


def rotation_error(est, gt):
    """Smallest rotation angle (degrees) taking ``gt``'s rotation onto ``est``'s."""
    Rd = np.asarray(est)[:3, :3] @ np.asarray(gt)[:3, :3].T
    # atan2 of (sin, cos) stays accurate near 0 and 180 degrees, unlike arccos
    c = (np.trace(Rd) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([Rd[2, 1] - Rd[1, 2], Rd[0, 2] - Rd[2, 0], Rd[1, 0] - Rd[0, 1]])
    return float(np.rad2deg(np.arctan2(s, c)))


def translation_error(est, gt, voxel_size=1.0):
    """Euclidean distance between translation vectors, scaled to micrometres.

    ``voxel_size`` may be a scalar or a per-axis ``(sx, sy, sz)`` triple.
    """
    d = (np.asarray(est)[:3, 3] - np.asarray(gt)[:3, 3]) * np.asarray(voxel_size, dtype=float)
    return float(np.linalg.norm(d))


def save_transform(T, path):
    """Write ``T`` as four lines of four space-separated numbers (17 significant digits)."""
    T = np.asarray(T, dtype=float)
    lines = [" ".join(f"{v:.17g}" for v in row) for row in T]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_transform(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if len(rows) != 4 or any(len(r) != 4 for r in rows):
        raise FormatError(f"{path}: expected 4 rows of 4 numbers")
    try:
        T = np.array(rows, dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric transform entry") from exc
    if T.shape != (4, 4):
        raise FormatError(f"{path}: expected 4x4 matrix, got shape {T.shape}")
    return T
