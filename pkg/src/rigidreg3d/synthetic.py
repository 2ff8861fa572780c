"""Deterministic bone-shaft phantoms with exact ground truth.

The phantom is a tapered, bent, elliptic cortical shell with a crest on one
side, enclosing a marrow cavity. Small ellipsoidal lacunae and tube-shaped
canals sit inside the shell wall. Two renderings are produced:

* an X-ray-like *moving* volume: bright shell, dark features, resampled
  through ``inverse(gt)`` so that ``fixed = gt @ moving`` in voxel coordinates;
* a light-sheet-like *fixed* volume: dim shell, bright features, a smooth
  haze field, and the lower part of every cross-section removed.

All shapes are implicit functions evaluated on the voxel grid with a one-voxel
linear edge ramp, except the outer boundary which is cut at half occupancy so
the object support has no dim partial-volume rim. Landmarks are the exact
(continuous) lacuna centres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transform as tf
from .errors import SpecInfeasible
from .evaluation import LandmarkSet
from .volume import Volume

XRM_LEVELS = {"bone": 210.0, "marrow": 30.0, "feature": 15.0}
LSFM_LEVELS = {"bone": 45.0, "marrow": 110.0, "feature": 230.0}
MIN_FEATURE_SPACING = 6.0


@dataclass
class PhantomSpec:
    dims: tuple = (256, 256, 128)
    voxel_size: float = 1.42
    outer_radii: tuple = (28.0, 21.0)
    inner_ratio: float = 0.5
    taper: float = 0.15
    flare: float = 0.35
    bend: float = 6.0
    crest_height: float = 0.22
    crest_angle_deg: float = -90.0
    crest_width: float = 0.45
    n_lacunae: int = 50
    n_canals: int = 6
    lacuna_radii: tuple = (2.0, 3.2)
    canal_radius: float = 2.0
    canal_length: tuple = (20.0, 50.0)
    noise_sigma: float = 3.0
    haze_amplitude: float = 0.1
    haze_sigma: float = 24.0
    lsfm_crop_fraction: float = 0.03
    max_translation: float = 100.0
    seed: int = 0

    def validate(self):
        a, b = self.outer_radii
        if min(self.dims) < 8:
            raise SpecInfeasible("dims: every axis needs at least 8 voxels")
        if not 0.0 < self.inner_ratio < 1.0:
            raise SpecInfeasible("inner_ratio: inner radius must be smaller than outer radius")
        if min(self.lacuna_radii) < 2.0 or self.canal_radius < 2.0:
            raise SpecInfeasible("feature radii must be at least 2 voxels")
        reach_x = a * (1 + abs(self.taper) + abs(self.flare)) * (1 + self.crest_height) + abs(self.bend) + 2
        reach_y = b * (1 + abs(self.taper) + abs(self.flare)) * (1 + self.crest_height) + 2
        if 2 * reach_x >= self.dims[0] or 2 * reach_y >= self.dims[1]:
            raise SpecInfeasible("outer_radii: shell does not fit in the volume cross-section")
        wall = min(a, b) * (1 - abs(self.taper)) * (1 - self.inner_ratio)
        if wall < 2 * (max(self.lacuna_radii) + 1):
            raise SpecInfeasible(
                f"wall thickness {wall:.2f} voxels cannot hold lacunae of radius {max(self.lacuna_radii)}"
            )
        if not 0.0 <= self.lsfm_crop_fraction < 0.5:
            raise SpecInfeasible("lsfm_crop_fraction must lie in [0, 0.5)")
        if self.max_translation < 0:
            raise SpecInfeasible("max_translation must be non-negative")


@dataclass
class Phantom:
    moving: Volume
    fixed: Volume
    gt: np.ndarray
    landmarks: LandmarkSet
    spec: PhantomSpec


class _Shape:
    """Implicit geometry in the fixed (reference) frame."""

    def __init__(self, spec):
        self.spec = spec
        nx, ny, nz = spec.dims
        self.cx0 = (nx - 1) / 2.0
        self.cy0 = (ny - 1) / 2.0
        self.zc = (nz - 1) / 2.0
        self.half = max(nz / 2.0, 1.0)

    def frame(self, x, y, z):
        s = self.spec
        u = (z - self.zc) / self.half
        cx = self.cx0 + s.bend * (u * u - 1.0 / 3.0)
        scale = 1.0 + s.taper * u + s.flare * ((u + 1.0) / 2.0) ** 4
        a = s.outer_radii[0] * scale
        b = s.outer_radii[1] * scale
        dx = (x - cx) / a
        dy = (y - self.cy0) / b
        rho = np.sqrt(dx * dx + dy * dy)
        theta = np.arctan2(dy, dx)
        return rho, theta, np.sqrt(a * b), dy

    def crest(self, theta):
        s = self.spec
        d = np.angle(np.exp(1j * (theta - np.deg2rad(s.crest_angle_deg))))
        return 1.0 + s.crest_height * np.exp(-((d / s.crest_width) ** 2))

    def occupancy(self, x, y, z):
        """Outer-body and marrow occupancies in [0, 1] plus normalised ``dy``."""
        rho, theta, r_eff, dy = self.frame(x, y, z)
        outer = np.clip(0.5 - (rho - self.crest(theta)) * r_eff, 0.0, 1.0)
        marrow = np.clip(0.5 - (rho - self.spec.inner_ratio) * r_eff, 0.0, 1.0)
        return outer, marrow, dy

    def wall_margin(self, p):
        """Distance (voxels, approximate) from ``p`` to the nearest shell boundary; negative outside the wall."""
        rho, theta, r_eff, _ = self.frame(p[0], p[1], p[2])
        return min((self.crest(theta) - rho) * r_eff, (rho - self.spec.inner_ratio) * r_eff)


def _place_features(shape, rng):
    s = shape.spec
    nx, ny, nz = s.dims
    feats = []

    def clear(c, r):
        for f in feats:
            if f["kind"] == "lacuna":
                d = np.linalg.norm(c - f["center"])
            else:
                d = _seg_dist(c, f["p0"], f["p1"])
            if d < MIN_FEATURE_SPACING + r + f["r"]:
                return False
        return True

    def sample_wall_point(margin, z_lo, z_hi):
        for _ in range(2000):
            p = np.array(
                [rng.uniform(0, nx - 1), rng.uniform(0, ny - 1), rng.uniform(z_lo, z_hi)]
            )
            if shape.wall_margin(p) >= margin:
                return p
        return None

    for _ in range(s.n_canals):
        r = s.canal_radius
        for _attempt in range(500):
            length = rng.uniform(*s.canal_length)
            p0 = sample_wall_point(r + 1.5, r + 2, nz - 3 - r - length)
            if p0 is None:
                continue
            p1 = p0 + np.array([0.0, 0.0, length])
            mid = 0.5 * (p0 + p1)
            if shape.wall_margin(p1) >= r + 1.5 and shape.wall_margin(mid) >= r + 1.5:
                if all(clear(p0 + t * (p1 - p0), r) for t in np.linspace(0, 1, 6)):
                    feats.append({"kind": "canal", "p0": p0, "p1": p1, "r": r})
                    break
        else:
            raise SpecInfeasible(f"n_canals: could not place canal {len(feats) + 1}")

    n_lac = 0
    for _ in range(s.n_lacunae):
        for _attempt in range(2000):
            radii = rng.uniform(*s.lacuna_radii, size=3)
            r = float(radii.max())
            c = sample_wall_point(r + 1.0, r + 2, nz - 3 - r)
            if c is not None and clear(c, r):
                feats.append({"kind": "lacuna", "center": c, "radii": radii, "r": r})
                n_lac += 1
                break
        else:
            raise SpecInfeasible(f"n_lacunae: only {n_lac} of {s.n_lacunae} lacunae fit in the shell wall")
    return feats


def _seg_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _feature_occupancy(f, X, Y, Z):
    if f["kind"] == "lacuna":
        q = np.stack([X - f["center"][0], Y - f["center"][1], Z - f["center"][2]])
        rr = np.sqrt(sum((q[i] / f["radii"][i]) ** 2 for i in range(3)))
        return np.clip(0.5 - (rr - 1.0) * f["radii"].min(), 0.0, 1.0)
    a, b = f["p0"], f["p1"]
    ab = b - a
    px, py, pz = X - a[0], Y - a[1], Z - a[2]
    t = np.clip((px * ab[0] + py * ab[1] + pz * ab[2]) / np.dot(ab, ab), 0.0, 1.0)
    d = np.sqrt((px - t * ab[0]) ** 2 + (py - t * ab[1]) ** 2 + (pz - t * ab[2]) ** 2)
    return np.clip(0.5 - (d - f["r"]), 0.0, 1.0)


def _feature_box(f, T_to_ref, dims):
    """Voxel box (in the rendered frame) that contains the feature."""
    if f["kind"] == "lacuna":
        pts = f["center"][None]
        pad = f["r"] + 2
    else:
        pts = np.stack([f["p0"], f["p1"]])
        pad = f["r"] + 2
    inv = tf.invert(T_to_ref)
    q = tf.apply_points(inv, pts)
    lo = np.maximum(np.floor(q.min(axis=0) - pad).astype(int), 0)
    hi = np.minimum(np.ceil(q.max(axis=0) + pad).astype(int) + 1, np.asarray(dims))
    return lo, hi


def _haze(spec, rng):
    nx, ny, nz = spec.dims
    field = np.zeros((nz, ny, nx))
    for _ in range(10):
        c = rng.uniform(0, 1, 3) * np.array([nx, ny, nz])
        amp = rng.uniform(0.3, 1.0)
        gx = np.exp(-0.5 * ((np.arange(nx) - c[0]) / spec.haze_sigma) ** 2)
        gy = np.exp(-0.5 * ((np.arange(ny) - c[1]) / spec.haze_sigma) ** 2)
        gz = np.exp(-0.5 * ((np.arange(nz) - c[2]) / spec.haze_sigma) ** 2)
        field += amp * gz[:, None, None] * gy[None, :, None] * gx[None, None, :]
    return field / max(field.max(), 1e-12)


def _render(shape, feats, levels, T_to_ref, dims, slab=16):
    """Intensities of the phantom seen through ``T_to_ref`` (render voxel -> reference frame)."""
    nx, ny, nz = dims
    out = np.zeros((nz, ny, nx))
    support = np.zeros((nz, ny, nx), dtype=bool)
    ydir = np.zeros((nz, ny, nx))
    R = T_to_ref[:3, :3]
    t = T_to_ref[:3, 3]
    jj, ii = np.meshgrid(np.arange(ny, dtype=float), np.arange(nx, dtype=float), indexing="ij")
    shell = np.zeros((nz, ny, nx))
    for k0 in range(0, nz, slab):
        kk = np.arange(k0, min(nz, k0 + slab), dtype=float)[:, None, None]
        X = R[0, 0] * ii + R[0, 1] * jj + R[0, 2] * kk + t[0]
        Y = R[1, 0] * ii + R[1, 1] * jj + R[1, 2] * kk + t[1]
        Z = R[2, 0] * ii + R[2, 1] * jj + R[2, 2] * kk + t[2]
        outer, marrow, dy = shape.occupancy(X, Y, Z)
        outer = (outer >= 0.5).astype(float)
        marrow = np.minimum(marrow, outer)
        sl = slice(k0, k0 + kk.shape[0])
        out[sl] = levels["bone"] * (outer - marrow) + levels["marrow"] * marrow
        shell[sl] = outer - marrow
        support[sl] = outer > 0
        ydir[sl] = dy
    for f in feats:
        lo, hi = _feature_box(f, T_to_ref, dims)
        if np.any(hi <= lo):
            continue
        k, j, i = np.meshgrid(
            np.arange(lo[2], hi[2]), np.arange(lo[1], hi[1]), np.arange(lo[0], hi[0]), indexing="ij"
        )
        X = R[0, 0] * i + R[0, 1] * j + R[0, 2] * k + t[0]
        Y = R[1, 0] * i + R[1, 1] * j + R[1, 2] * k + t[1]
        Z = R[2, 0] * i + R[2, 1] * j + R[2, 2] * k + t[2]
        occ = _feature_occupancy(f, X, Y, Z) * shell[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]]
        box = out[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]]
        box += occ * (levels["feature"] - levels["bone"])
    return out, support, ydir


def generate_phantom(spec=None, gt=None):
    """Build a moving/fixed phantom pair, its ground truth and landmark pairs.

    ``gt`` maps moving voxel coordinates to fixed ones; when omitted it is
    drawn with :func:`rigidreg3d.pipeline.random_pretransform` from ``spec.seed``.
    """
    from .pipeline import random_pretransform

    spec = spec or PhantomSpec()
    spec.validate()
    dims = tuple(int(d) for d in spec.dims)
    rng = np.random.default_rng([spec.seed, 1])
    shape = _Shape(spec)
    feats = _place_features(shape, rng)
    center = (np.asarray(dims, dtype=float) - 1) / 2
    if gt is None:
        gt = random_pretransform(spec.seed, center=center, max_translation=spec.max_translation)
    gt = np.asarray(gt, dtype=float)

    noise_rng = np.random.default_rng([spec.seed, 2])
    haze_rng = np.random.default_rng([spec.seed, 3])

    xrm, xrm_support, _ = _render(shape, feats, XRM_LEVELS, gt, dims)
    lsfm, lsfm_support, dy = _render(shape, feats, LSFM_LEVELS, np.eye(4), dims)

    lsfm += spec.haze_amplitude * 255.0 * _haze(spec, haze_rng) * lsfm_support
    keep = dy <= 1.0 - 2.0 * spec.lsfm_crop_fraction
    lsfm_support &= keep
    lsfm[~lsfm_support] = 0.0

    vols = []
    for data, support in ((xrm, xrm_support), (lsfm, lsfm_support)):
        if spec.noise_sigma > 0:
            data += noise_rng.normal(0.0, spec.noise_sigma, data.shape) * support
        data = np.where(support, np.clip(data, 1.0, 255.0), 0.0)
        vols.append(Volume(data.astype(np.float32), (spec.voxel_size,) * 3))

    centers = np.array([f["center"] for f in feats if f["kind"] == "lacuna"]).reshape(-1, 3)
    lms = LandmarkSet(tf.apply_points(tf.invert(gt), centers), centers, spec.voxel_size)
    return Phantom(vols[0], vols[1], gt, lms, spec)
