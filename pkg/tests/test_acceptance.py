"""Acceptance suite: one test per criterion, each recorded for the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``; the phantom suite
behind criteria 6 and 7 (20 full-size registrations) dominates the runtime.
"""

import json
import time

import numpy as np
import pytest
from conftest import random_rigid, record_criterion

from rigidreg3d import cli
from rigidreg3d import evaluation as ev
from rigidreg3d import mncc
from rigidreg3d import pipeline as pl
from rigidreg3d import surface as sf
from rigidreg3d import synthetic
from rigidreg3d import transform as tf
from rigidreg3d import volume as vm
from rigidreg3d.features import compute_fpfh
from rigidreg3d.icp import IcpParams, point_to_plane_icp

N_SEEDS = 20


def test_criterion_01_mncc_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for _ in range(20):
        shape = (16, 16, 16)
        p1, p2 = rng.uniform(0.3, 0.9, 2)
        v1, v2 = rng.random(shape) * 255, rng.random(shape) * 255
        m1, m2 = rng.random(shape) < p1, rng.random(shape) < p2
        c = mncc.mncc_fft(v1, m1, v2, m2)
        for k, j, i in zip(*np.nonzero(c.valid)):
            s = mncc.mncc_spatial(v1, m1, v2, m2, c.shift_of((k, j, i)))
            worst = max(worst, abs(s - c.scores[k, j, i]) if s is not None else np.inf)
            checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 10.0
    detail = f"max |fft-spatial|={worst:.2e} over {checked} shifts, {elapsed:.1f} s"
    record_criterion(1, "MNCC oracle equivalence", ok, detail)
    assert ok


def test_criterion_02_mncc_translation_recovery():
    rng = np.random.default_rng(202)
    shape = (32, 40, 36)  # (nz, ny, nx)
    quarter = np.array([36, 40, 32]) // 4
    hits = 0
    for _ in range(50):
        v = vm.gaussian_blur(vm.Volume(rng.random(shape) * 255), 1.5).data
        m = np.zeros(shape, bool)
        m[3:-3, 3:-3, 3:-3] = True
        v = np.where(m, v, 0.0)
        d = tuple(int(x) for x in rng.integers(-quarter, quarter + 1))
        T = tf.translation(d)
        moved = vm.resample_rigid(vm.Volume(v), T, "nearest").data
        mm = vm.resample_rigid(vm.Volume(m.astype(np.float32)), T, "nearest").data > 0.5
        shift, _ = mncc.find_peak(mncc.mncc_fft(v, m, moved, mm))
        hits += shift == d
    record_criterion(2, "MNCC translation recovery", hits == 50, f"{hits}/50 exact")
    assert hits == 50


def test_criterion_03_umeyama_exactness():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 1001))
        src = rng.uniform(-200, 200, (n, 3))
        T = random_rigid(rng, 180, 100)
        est = tf.umeyama_fit(src, tf.apply_points(T, src))
        worst = max(worst, np.linalg.norm(tf.apply_points(est, src) - tf.apply_points(T, src), axis=1).max())
    record_criterion(3, "Umeyama exactness", worst < 1e-9, f"max residual {worst:.2e}")
    assert worst < 1e-9


def test_criterion_04_icp_local_convergence(noiseless_phantom):
    fixed = sf.estimate_normals(sf.extract_surface(noiseless_phantom.fixed.data > 0), 30)
    rng = np.random.default_rng(404)
    good = 0
    for _ in range(40):
        angle = rng.uniform(0, 5)
        shift = rng.normal(size=3)
        shift *= rng.uniform(0, 5) / np.linalg.norm(shift)
        P = tf.compose(tf.translation(shift), tf.about_center(tf.axis_angle(rng.normal(size=3), angle), fixed.centroid))
        moving = sf.PointCloud(tf.apply_points(tf.invert(P), fixed.points))
        T, sc = point_to_plane_icp(moving, fixed, np.eye(4), IcpParams(16.0, 50))
        good += tf.rotation_error(T, P) < 0.1 and tf.translation_error(T, P) < 0.2 and sc.iterations <= 50
    ok = good >= 38
    record_criterion(4, "ICP local convergence", ok, f"{good}/40 within 0.1 deg / 0.2 vox in <= 50 iterations")
    assert ok


def test_criterion_05_fpfh_rigid_invariance(noiseless_phantom):
    rng = np.random.default_rng(505)
    pts = sf.extract_surface(noiseless_phantom.fixed.data > 0).points
    pc = sf.PointCloud(pts[np.sort(rng.choice(len(pts), 5000, replace=False))])
    base = compute_fpfh(sf.estimate_normals(pc, 30), 30.0, 100).descriptors
    worst = 0.0
    for _ in range(20):
        moved = sf.estimate_normals(pc.transformed(random_rigid(rng, 180, 100)), 30)
        worst = max(worst, np.abs(compute_fpfh(moved, 30.0, 100).descriptors - base).max())
    record_criterion(5, "FPFH rigid invariance", worst < 1e-5, f"max drift {worst:.2e}")
    assert worst < 1e-5


@pytest.fixture(scope="module")
def phantom_suite():
    """Full pipeline and S1.2-only runs on the 20 seeded 256x256x128 phantoms."""
    rows = []
    for seed in range(N_SEEDS):
        ph = synthetic.generate_phantom(synthetic.PhantomSpec(seed=seed))
        t0 = time.perf_counter()
        r = pl.register(ph.moving, ph.fixed, pl.PipelineConfig.desk(seed=seed, resample_output=False))
        elapsed = time.perf_counter() - t0
        only = pl.register(
            ph.moving,
            ph.fixed,
            pl.PipelineConfig.desk(seed=seed, stages=("s12",), allow_partial=True, resample_output=False),
        )
        lmd = {
            name: ev.landmark_distance(ph.landmarks, T) / ph.spec.voxel_size
            for name, T in (("s11", r.t_11), ("s12", r.t_12), ("full", r.t_overall), ("s12only", only.t_overall))
        }
        rows.append(
            dict(
                seed=seed,
                time=elapsed,
                rot=tf.rotation_error(r.t_overall, ph.gt),
                trans=tf.translation_error(r.t_overall, ph.gt),
                lmd=lmd,
            )
        )
    return rows


@pytest.mark.slow
def test_criterion_06_end_to_end_phantoms(phantom_suite):
    n = sum(
        r["rot"] < 1.0 and r["trans"] < 2.0 and r["lmd"]["full"] < 3.0 and r["time"] < 300 for r in phantom_suite
    )
    ok = n >= 0.95 * N_SEEDS
    worst = max(phantom_suite, key=lambda r: r["lmd"]["full"])
    detail = (
        f"{n}/{N_SEEDS} runs pass; worst LMD {worst['lmd']['full']:.2f} vox (seed {worst['seed']}); "
        f"max time {max(r['time'] for r in phantom_suite):.0f} s"
    )
    record_criterion(6, "end-to-end phantoms", ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_07_ablation_ordering(phantom_suite):
    med = {k: float(np.median([r["lmd"][k] for r in phantom_suite])) for k in ("s11", "s12", "full", "s12only")}
    ok = med["full"] < med["s12"] < med["s11"] and med["s12only"] > 10 * med["full"]
    detail = "median LMD (vox): " + ", ".join(f"{k}={v:.2f}" for k, v in med.items())
    record_criterion(7, "ablation ordering", ok, detail)
    assert ok


def test_criterion_08_metric_correctness():
    checks = []
    lms = ev.LandmarkSet([[0, 0, 0], [10, 0, 0], [0, 10, 0]], [[3, 4, 0], [10, 0, 10], [0, 10, 0]], 2.0)
    # distances 5, 10, 0 voxels -> 10, 20, 0 um
    checks.append(abs(ev.landmark_distance(lms, np.eye(4)) - 10.0) <= 1e-9)
    checks.append(ev.landmark_fitness(lms, np.eye(4), 12.0) == 2 / 3)
    checks.append(ev.landmark_fitness(lms, tf.translation(-3, -4, 0), 12.0) == 1 / 3)
    checks.append(abs(tf.rotation_error(tf.rotation_z(37), tf.rotation_z(-8)) - 45.0) <= 1e-9)
    checks.append(abs(tf.rotation_error(tf.axis_angle([1, -2, 3], 180), np.eye(4)) - 180.0) <= 1e-9)
    checks.append(abs(tf.rotation_error(tf.axis_angle([0, 1, 0], 1e-4), np.eye(4)) - 1e-4) <= 1e-12)
    checks.append(tf.translation_error(tf.translation(3, 4, 12), np.eye(4)) == 13.0)
    checks.append(abs(tf.translation_error(tf.translation(3, 4, 0), np.eye(4), 1.42) - 7.1) <= 1e-12)
    ok = all(checks)
    record_criterion(8, "metric correctness", ok, f"{sum(checks)}/{len(checks)} hand cases exact")
    assert ok


def _manifest_without_timings(path):
    m = json.loads(path.read_text())
    m.pop("timings", None)
    return m


def test_criterion_09_determinism(small_phantom, tmp_path):
    vm.save_volume(small_phantom.moving, tmp_path / "moving")
    vm.save_volume(small_phantom.fixed, tmp_path / "fixed")
    same = []
    for threads in (1, 4):
        outs = []
        for rep in range(2):
            out = tmp_path / f"reg_{threads}_{rep}"
            argv = ["register", "--moving", str(tmp_path / "moving"), "--fixed", str(tmp_path / "fixed")]
            argv += ["--out", str(out), "--threads", str(threads), "--seed", "7", "--downsample", "2", "--fpfh-radius", "8"]
            code = cli.main(argv)
            assert code == 0
            outs.append(out)
        same.append(
            _manifest_without_timings(outs[0] / "manifest.json") == _manifest_without_timings(outs[1] / "manifest.json")
            and (outs[0] / "t_overall.mat").read_bytes() == (outs[1] / "t_overall.mat").read_bytes()
        )
    synth = []
    for rep in range(2):
        out = tmp_path / f"synth_{rep}"
        assert cli.main(["synth", "--dims", "128,128,64", "--lacunae", "10", "--canals", "2", "--seed", "5",
                         "--out", str(out)]) == 0
        synth.append({p.name: p.read_bytes() for p in out.iterdir()})
    same.append(synth[0] == synth[1])
    ok = all(same)
    record_criterion(9, "determinism", ok, f"register threads=1 {same[0]}, threads=4 {same[1]}, synth {same[2]}")
    assert ok


def test_criterion_10_roundtrip_io(tmp_path):
    rng = np.random.default_rng(1010)
    ok_vol = True
    for shape in ((1, 1, 1), (5, 7, 3), (33, 17, 20)):
        data = rng.normal(0, 1e3, shape).astype(np.float32)
        data.flat[0] = np.float32(np.pi)
        v = vm.Volume(data, (1.42, 0.7, 2.5))
        vm.save_volume(v, tmp_path / "v")
        back = vm.load_volume(tmp_path / "v")
        ok_vol &= back.data.tobytes() == data.tobytes() and back.voxel_size == v.voxel_size
    ok_tf = True
    for _ in range(50):
        T = random_rigid(rng, 180, 1e4)
        tf.save_transform(T, tmp_path / "t.mat")
        ok_tf &= np.array_equal(tf.load_transform(tmp_path / "t.mat"), T)
    ok = bool(ok_vol and ok_tf)
    record_criterion(10, "round-trip I/O", ok, f"volumes bit-identical {ok_vol}, transforms exact {ok_tf}")
    assert ok

