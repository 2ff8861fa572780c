"""Time the hot kernels with numba and with the pure-numpy fallback.

Each mode runs in its own interpreter because the switch is read at import::

    python benchmarks/bench_kernels.py            # both modes, table + agreement check
    python benchmarks/bench_kernels.py --size 96  # larger volumes

Numba compile time is excluded by one warm-up call per kernel.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up (jit compile)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_mode(size, repeat, out_npz):
    from rigidreg3d import _accel, mncc
    from rigidreg3d import surface as sf
    from rigidreg3d import transform as tf
    from rigidreg3d import volume as vm
    from rigidreg3d.features import compute_fpfh

    rng = np.random.default_rng(0)
    n = size
    vol = vm.gaussian_blur(vm.Volume(rng.random((n // 2, n, n)) * 255), 2.0)
    T = tf.about_center(tf.axis_angle([0.2, 0.3, 1.0], 17.0), np.array(vol.dims) / 2) @ tf.translation(1.3, -2.1, 0.7)

    yy, xx = np.mgrid[:n, :n]
    disk = np.hypot(yy - n / 2, xx - n / 2) < n / 3
    pc = sf.estimate_normals(sf.extract_surface(np.broadcast_to(disk, (n // 2, n, n)).copy()), 30)

    m1 = rng.random(vol.data.shape) < 0.7
    m2 = rng.random(vol.data.shape) < 0.7
    v2 = vol.data[::-1].copy()

    cases = {
        "resample linear": lambda: vm.resample_rigid(vol, T, "linear").data,
        "resample cubic": lambda: vm.resample_rigid(vol, T, "cubic").data,
        "fpfh": lambda: compute_fpfh(pc, 6.0, 60).descriptors,
        "mncc one shift": lambda: np.array([mncc.mncc_spatial(vol, m1, vm.Volume(v2), m2, (2, -1, 3))]),
    }
    times, outputs = {}, {}
    for name, fn in cases.items():
        times[name], outputs[name] = _best_of(fn, repeat)
    np.savez(out_npz, **{k.replace(" ", "_"): v for k, v in outputs.items()})
    return {"numba": _accel.NUMBA_AVAILABLE, "points": len(pc), "times": times}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=64, help="volume edge length (z is half)")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--child", help=argparse.SUPPRESS)
    args = p.parse_args(argv)

    if args.child:
        print(json.dumps(run_mode(args.size, args.repeat, args.child)))
        return 0

    results = {}
    with tempfile.TemporaryDirectory() as tmp:
        for mode in ("numba", "numpy"):
            env = dict(os.environ)
            env.pop("RIGIDREG3D_DISABLE_NUMBA", None)
            if mode == "numpy":
                env["RIGIDREG3D_DISABLE_NUMBA"] = "1"
            npz = os.path.join(tmp, f"{mode}.npz")
            cmd = [sys.executable, __file__, "--size", str(args.size), "--repeat", str(args.repeat), "--child", npz]
            proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
            results[mode] = json.loads(proc.stdout.strip().splitlines()[-1])
            results[mode]["out"] = dict(np.load(npz))

    if not results["numba"]["numba"]:
        print("numba is not importable here; both rows use the numpy fallback")
    print(f"volume {args.size}x{args.size}x{args.size // 2}, surface {results['numba']['points']} points")
    print(f"{'kernel':<18}{'numba (s)':>12}{'numpy (s)':>12}{'speed-up':>10}{'max |diff|':>13}")
    for name, t_nb in results["numba"]["times"].items():
        t_np = results["numpy"]["times"][name]
        key = name.replace(" ", "_")
        diff = float(np.max(np.abs(results["numba"]["out"][key] - results["numpy"]["out"][key])))
        print(f"{name:<18}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>9.1f}x{diff:>13.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
