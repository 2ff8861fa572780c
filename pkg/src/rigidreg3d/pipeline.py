"""End-to-end two-stage registration: surface alignment then masked correlation."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import transform as tf
from . import volume as vm
from .errors import RegistrationError, StageError
from .features import compute_fpfh
from .icp import IcpParams, point_to_plane_icp
from .mncc import Stage2Config, stage2_refine
from .ransac import RansacParams, ransac_register
from .surface import center_align, estimate_normals, extract_surface, voxel_downsample

log = logging.getLogger(__name__)

STAGES = ("s11", "s12", "s2")


@dataclass
class PipelineConfig:
    moving_threshold: float = 5.0
    fixed_threshold: float = 0.0
    closing_radius: int = 2
    normal_k: int = 30
    downsample: float = 1.0
    fpfh_radius: float = 200.0
    fpfh_max_nn: int = 400
    ransac: RansacParams = field(default_factory=RansacParams)
    icp: IcpParams = field(default_factory=lambda: IcpParams(16.0, 2000))
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stages: tuple = STAGES
    allow_partial: bool = False
    seed: int = 0
    intermediate_interp: str = "linear"
    final_interp: str = "cubic"
    resample_output: bool = True
    threads: int | None = None
    moving_z_range: tuple | None = None
    fixed_z_range: tuple | None = None

    @classmethod
    def desk(cls, **overrides):
        """Settings scaled to the ~256-voxel synthetic phantoms (surfaces thinned to 3-voxel cells)."""
        base = dict(
            downsample=3.0,
            fpfh_radius=15.0,
            fpfh_max_nn=100,
            ransac=RansacParams(iterations=200_000, inlier_distance=3.0, confidence=0.999),
            icp=IcpParams(16.0, 2000),
        )
        base.update(overrides)
        return cls(**base)

    def validate(self):
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stage(s): {sorted(unknown)}")
        if not self.allow_partial and "s11" not in self.stages and set(self.stages) & {"s12", "s2"}:
            raise ValueError("s12/s2 without s11 needs allow_partial=True")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "ransac" in d and isinstance(d["ransac"], dict):
            d["ransac"] = RansacParams(**d["ransac"])
        if "icp" in d and isinstance(d["icp"], dict):
            d["icp"] = IcpParams(**d["icp"])
        if "stage2" in d and isinstance(d["stage2"], dict):
            d["stage2"] = Stage2Config(**d["stage2"])
        for key in ("stages", "moving_z_range", "fixed_z_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class RegistrationResult:
    t_11: np.ndarray
    t_12: np.ndarray
    t_1: np.ndarray
    t_2: np.ndarray
    t_overall: np.ndarray
    scores: dict
    timings: dict
    moved: vm.Volume | None = None

    def transforms(self):
        return {
            "t_11": self.t_11,
            "t_12": self.t_12,
            "t_1": self.t_1,
            "t_2": self.t_2,
            "t_overall": self.t_overall,
        }


def random_pretransform(seed, center=(0.0, 0.0, 0.0), max_translation=100.0, max_angle=180.0):
    """Random in-plane rigid motion: rotation about z through ``center`` plus an xy translation.

    The angle is uniform in ``[-max_angle, max_angle]`` degrees; the translation
    has magnitude uniform in ``[0, max_translation]`` voxels and a uniform direction.
    """
    rng = np.random.default_rng([int(seed), 7])
    angle = rng.uniform(-max_angle, max_angle)
    mag = rng.uniform(0.0, max_translation)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    rot = tf.about_center(tf.rotation_z(angle), center)
    return tf.compose(tf.translation(mag * np.cos(phi), mag * np.sin(phi), 0.0), rot)


def preprocess_pair(moving_raw, fixed_raw, cfg=None):
    """Bring a raw pair onto one grid: resample, crop slices, pad, normalise."""
    cfg = cfg or PipelineConfig()
    fixed = fixed_raw
    if not np.allclose(fixed.voxel_size, moving_raw.voxel_size, rtol=0, atol=1e-12):
        fixed = vm.resample_to(fixed, moving_raw.voxel_size)
    moving = moving_raw
    if cfg.moving_z_range is not None:
        z0, z1 = cfg.moving_z_range
        moving = vm.crop(moving, (0, 0, z0), (moving.dims[0], moving.dims[1], z1 - z0))
    if cfg.fixed_z_range is not None:
        z0, z1 = cfg.fixed_z_range
        fixed = vm.crop(fixed, (0, 0, z0), (fixed.dims[0], fixed.dims[1], z1 - z0))
    dims = tuple(max(a, b) for a, b in zip(moving.dims, fixed.dims))
    if moving.dims != dims:
        moving = vm.pad_to(moving, dims)
    if fixed.dims != dims:
        fixed = vm.pad_to(fixed, dims)
    return vm.normalize_0_255(moving), vm.normalize_0_255(fixed)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except RegistrationError as exc:
        raise StageError(name, exc) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def surfaces(moving, fixed, cfg):
    pm = extract_surface(vm.threshold(moving, cfg.moving_threshold), cfg.closing_radius)
    pf = extract_surface(vm.threshold(fixed, cfg.fixed_threshold), cfg.closing_radius)
    return pm, pf


def _global_stage(pm, pf, cfg):
    t_c = center_align(pm, pf)
    mov = voxel_downsample(pm.transformed(t_c), cfg.downsample)
    fix = voxel_downsample(pf, cfg.downsample)
    k = min(cfg.normal_k, len(mov), len(fix))
    mov = estimate_normals(mov, k)
    fix = estimate_normals(fix, k)
    fm = compute_fpfh(mov, cfg.fpfh_radius, cfg.fpfh_max_nn)
    ff = compute_fpfh(fix, cfg.fpfh_radius, cfg.fpfh_max_nn)
    params = dataclasses.replace(cfg.ransac, seed=cfg.seed)
    return ransac_register(fm, ff, params, prior=t_c)


def register(moving, fixed, cfg=None):
    """Register ``moving`` onto ``fixed``; both must already share grid and voxel size.

    Disabled stages contribute the identity. The composed ``t_overall`` maps
    moving voxel coordinates to fixed voxel coordinates.
    """
    cfg = cfg or PipelineConfig()
    cfg.validate()
    if moving.data.shape != fixed.data.shape or not np.allclose(moving.voxel_size, fixed.voxel_size):
        raise ValueError("register() needs volumes on a common grid; run preprocess_pair first")
    from ._accel import set_threads

    set_threads(cfg.threads)
    I = tf.identity()
    t_11, t_12, t_2 = I, I, I
    scores, timings = {}, {}
    stages = set(cfg.stages)

    if stages & {"s11", "s12"}:
        t0 = time.perf_counter()
        pm, pf = _stage("surface", surfaces, moving, fixed, cfg)
        timings["surface"] = time.perf_counter() - t0
        scores["surface"] = {"moving_points": len(pm), "fixed_points": len(pf)}

    if "s11" in stages:
        t0 = time.perf_counter()
        t_11, sc = _stage("s11", _global_stage, pm, pf, cfg)
        timings["s11"] = time.perf_counter() - t0
        scores["s11"] = sc.as_dict()

    t_1 = t_11
    if "s12" in stages:
        t0 = time.perf_counter()
        pf_n = _stage("s12", estimate_normals, pf, min(cfg.normal_k, len(pf)))
        t_12, sc = _stage("s12", point_to_plane_icp, pm, pf_n, t_11, cfg.icp)
        timings["s12"] = time.perf_counter() - t0
        scores["s12"] = sc.as_dict()
        t_1 = t_12

    if "s2" in stages:
        t0 = time.perf_counter()
        aligned = moving if np.array_equal(t_1, I) else vm.resample_rigid(moving, t_1, cfg.intermediate_interp)
        t_2, score = _stage("s2", stage2_refine, aligned, fixed, cfg.stage2, cfg.threads)
        timings["s2"] = time.perf_counter() - t0
        scores["s2"] = {"mncc": score, "translation": [float(v) for v in t_2[:3, 3]]}

    t_overall = tf.compose(t_2, t_1)
    moved = None
    if cfg.resample_output:
        t0 = time.perf_counter()
        moved = vm.resample_rigid(moving, t_overall, cfg.final_interp)
        timings["resample"] = time.perf_counter() - t0
    log.info("registration done: %s", {k: round(v, 3) for k, v in timings.items()})
    return RegistrationResult(t_11, t_12, t_1, t_2, t_overall, scores, timings, moved)
