"""Command-line entry point: ``rigidreg3d {synth,register,evaluate,render}``.

Exit codes: 0 success, 2 usage or infeasible request, 3 I/O failure,
4 registration failure. Every flag can also come from ``--config file.json``
(keys are the flag names with dashes replaced by underscores); flags given
on the command line win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import evaluation as ev
from . import transform as tf
from . import volume as vm
from ._accel import set_threads
from .errors import FormatError, RegistrationError, SpecInfeasible, StageError

log = logging.getLogger("rigidreg3d")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ALGO = 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _triple(text, cast=float):
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 1 or 3 comma-separated values, got {text!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _volume_hashes(path):
    raw, side = vm._paths(path)
    return {os.path.basename(raw): _sha256(raw), os.path.basename(side): _sha256(side)}


def _flat(T):
    return [float(v) for v in np.asarray(T).ravel()]


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ synth


def cmd_synth(args):
    from .synthetic import PhantomSpec, generate_phantom

    spec = PhantomSpec(
        dims=args.dims,
        voxel_size=args.voxel_size,
        n_lacunae=args.lacunae,
        n_canals=args.canals,
        noise_sigma=args.noise,
        lsfm_crop_fraction=args.crop_fraction,
        max_translation=args.max_translation,
        seed=args.seed,
    )
    gt = None
    if args.gt is not None:
        gt = _io(tf.load_transform, args.gt)
    try:
        ph = generate_phantom(spec, gt)
    except SpecInfeasible as exc:
        raise CliError(EXIT_USAGE, f"infeasible phantom: {exc}") from exc

    def write():
        os.makedirs(args.out, exist_ok=True)
        vm.save_volume(ph.moving, os.path.join(args.out, "moving"))
        vm.save_volume(ph.fixed, os.path.join(args.out, "fixed"))
        tf.save_transform(ph.gt, os.path.join(args.out, "gt.mat"))
        ev.save_landmarks(ph.landmarks, os.path.join(args.out, "landmarks.csv"))
        outputs = ["moving.raw", "moving.json", "fixed.raw", "fixed.json", "gt.mat", "landmarks.csv"]
        manifest = {
            "command": "synth",
            "seed": args.seed,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(spec).items()},
            "outputs": outputs,
            "gt": _flat(ph.gt),
        }
        _write_json(manifest, os.path.join(args.out, "manifest.json"))

    _io(write)
    print(f"wrote phantom pair to {args.out}")
    return 0


# --------------------------------------------------------------- register


def _build_config(args):
    from .icp import IcpParams
    from .mncc import Stage2Config
    from .pipeline import PipelineConfig
    from .ransac import RansacParams

    def pick(value, default):
        return default if value is None else value

    base = PipelineConfig.desk() if args.preset == "desk" else PipelineConfig()
    r = base.ransac
    ransac = RansacParams(
        iterations=pick(args.ransac_iterations, r.iterations),
        inlier_distance=pick(args.ransac_distance, r.inlier_distance),
        confidence=pick(args.confidence, r.confidence),
        seed=args.seed,
    )
    i = base.icp
    icp = IcpParams(
        max_correspondence_distance=pick(args.icp_distance, i.max_correspondence_distance),
        max_iterations=pick(args.icp_iterations, i.max_iterations),
        epsilon=i.epsilon,
    )
    window = base.stage2.window
    if args.window is not None:
        window = None if args.window == "full" else ("auto" if args.window == "auto" else int(args.window))
    stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
    cfg = PipelineConfig(
        moving_threshold=args.moving_threshold,
        fixed_threshold=args.fixed_threshold,
        closing_radius=args.closing_radius,
        normal_k=base.normal_k,
        downsample=pick(args.downsample, base.downsample),
        fpfh_radius=pick(args.fpfh_radius, base.fpfh_radius),
        fpfh_max_nn=pick(args.fpfh_max_nn, base.fpfh_max_nn),
        ransac=ransac,
        icp=icp,
        stage2=Stage2Config(unsharp_sigma=args.unsharp_sigma, unsharp_weight=args.unsharp_weight, window=window),
        stages=stages,
        allow_partial=args.allow_partial,
        seed=args.seed,
        resample_output=args.emit_moved,
        threads=args.threads,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    return cfg


def cmd_register(args):
    from .pipeline import preprocess_pair, register

    cfg = _build_config(args)
    moving = _io(vm.load_volume, args.moving)
    fixed = _io(vm.load_volume, args.fixed)
    if args.preprocess or moving.data.shape != fixed.data.shape or moving.voxel_size != fixed.voxel_size:
        moving, fixed = preprocess_pair(moving, fixed, cfg)
    try:
        result = register(moving, fixed, cfg)
    except StageError as exc:
        raise CliError(EXIT_ALGO, f"registration failed in stage {exc.stage}: {exc.cause}") from exc
    except RegistrationError as exc:
        raise CliError(EXIT_ALGO, f"registration failed: {exc}") from exc

    def write():
        os.makedirs(args.out, exist_ok=True)
        outputs = ["manifest.json", "t_overall.mat"]
        tf.save_transform(result.t_overall, os.path.join(args.out, "t_overall.mat"))
        if args.export_init:
            tf.save_transform(result.t_overall, args.export_init)
            outputs.append(os.path.abspath(args.export_init))
        if args.emit_moved and result.moved is not None:
            vm.save_volume(result.moved, os.path.join(args.out, "moved"))
            outputs += ["moved.raw", "moved.json"]
        manifest = {
            "command": "register",
            "seed": args.seed,
            "threads": args.threads,
            "config": cfg.to_dict(),
            "inputs": {**_volume_hashes(args.moving), **_volume_hashes(args.fixed)},
            "transforms": {k: _flat(v) for k, v in result.transforms().items()},
            "scores": result.scores,
            "timings": result.timings,
            "outputs": outputs,
        }
        _write_json(manifest, os.path.join(args.out, "manifest.json"))

    _io(write)
    print(f"t_overall written to {os.path.join(args.out, 't_overall.mat')}")
    return 0


# --------------------------------------------------------------- evaluate


def cmd_evaluate(args):
    T = _io(tf.load_transform, args.transform)
    try:
        lms = ev.load_landmarks(args.landmarks, args.voxel_size)
    except FormatError as exc:
        raise CliError(EXIT_USAGE, f"malformed landmark file: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    gt = _io(tf.load_transform, args.gt) if args.gt else None
    try:
        report = ev.metrics_report(T, lms, gt=gt, tau_um=args.tau, gt_seed=args.seed)
    except RegistrationError as exc:
        raise CliError(EXIT_ALGO, str(exc)) from exc
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        _io(_write_json, report, args.out)
    print(text)
    return 0


# ----------------------------------------------------------------- render


def _to_u8(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_pgm(img, path):
    img = _to_u8(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def central_slices(data):
    nz, ny, nx = data.shape
    return {"xy": data[nz // 2], "xz": data[:, ny // 2, :], "yz": data[:, :, nx // 2]}


def checkerboard(a, b, tile):
    h, w = a.shape
    yy, xx = np.mgrid[:h, :w]
    return np.where(((yy // tile) + (xx // tile)) % 2 == 0, a, b)


def cmd_render(args):
    vol = _io(vm.load_volume, args.volume)
    other = _io(vm.load_volume, args.overlay) if args.overlay else None
    if other is not None and other.data.shape != vol.data.shape:
        raise CliError(EXIT_USAGE, "overlay volume must match the volume's dims")

    def write():
        os.makedirs(args.out, exist_ok=True)
        a = central_slices(vol.data)
        b = central_slices(other.data) if other is not None else None
        for plane, img in a.items():
            if b is not None:
                img = checkerboard(img, b[plane], args.tile)
            write_pgm(img, os.path.join(args.out, f"{args.prefix}_{plane}.pgm"))

    _io(write)
    print(f"rendered central slices to {args.out}")
    return 0


# ------------------------------------------------------------------ plumbing


def _io(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (OSError, FormatError) as exc:
        raise CliError(EXIT_IO, f"I/O error: {exc}") from exc


def build_parser():
    p = argparse.ArgumentParser(prog="rigidreg3d", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file supplying defaults for any flag")
        sp.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        sp.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("synth", help="write a synthetic phantom pair with ground truth")
    common(s)
    s.add_argument("--dims", type=lambda t: _triple(t, int), default=(256, 256, 128))
    s.add_argument("--voxel-size", type=float, default=1.42)
    s.add_argument("--lacunae", type=int, default=50)
    s.add_argument("--canals", type=int, default=6)
    s.add_argument("--noise", type=float, default=3.0)
    s.add_argument("--crop-fraction", type=float, default=0.03)
    s.add_argument("--max-translation", type=float, default=100.0, help="random in-plane shift bound (voxels)")
    s.add_argument("--gt", help="use this transform file instead of a random one")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("register", help="register a moving volume onto a fixed volume")
    common(r)
    r.add_argument("--moving", required=True)
    r.add_argument("--fixed", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--stages", default="s11,s12,s2")
    r.add_argument("--allow-partial", action="store_true", help="permit s12/s2 without s11")
    r.add_argument("--preset", choices=("full", "desk"), default="desk")
    r.add_argument("--preprocess", action="store_true", help="force resample/pad/normalise first")
    r.add_argument("--moving-threshold", type=float, default=5.0)
    r.add_argument("--fixed-threshold", type=float, default=0.0)
    r.add_argument("--closing-radius", type=int, default=2)
    r.add_argument("--downsample", type=float)
    r.add_argument("--fpfh-radius", type=float)
    r.add_argument("--fpfh-max-nn", type=int)
    r.add_argument("--ransac-iterations", type=int)
    r.add_argument("--ransac-distance", type=float)
    r.add_argument("--confidence", type=float)
    r.add_argument("--icp-distance", type=float)
    r.add_argument("--icp-iterations", type=int)
    r.add_argument("--unsharp-sigma", type=float, default=5.0)
    r.add_argument("--unsharp-weight", type=float, default=0.8)
    r.add_argument("--window", help="stage-2 search half-width in voxels, 'auto' or 'full'")
    r.add_argument("--emit-moved", action="store_true", help="write the cubic-resampled moving volume")
    r.add_argument("--export-init", help="also write t_overall here for external refiners")
    r.set_defaults(func=cmd_register)

    e = sub.add_parser("evaluate", help="landmark metrics for a transform")
    common(e)
    e.add_argument("--transform", required=True)
    e.add_argument("--landmarks", required=True)
    e.add_argument("--gt", help="ground-truth transform; default: landmark RANSAC fit")
    e.add_argument("--tau", type=float, default=ev.DEFAULT_TAU_UM, help="LM fitness threshold (um)")
    e.add_argument("--voxel-size", type=float, default=1.42, help="micrometres per voxel")
    e.add_argument("--out", help="write the JSON report here (e.g. metrics.json)")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("render", help="8-bit PGM central slices, optionally checkerboarded")
    common(v)
    v.add_argument("--volume", required=True)
    v.add_argument("--overlay")
    v.add_argument("--tile", type=int, default=16)
    v.add_argument("--prefix", default="slice")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_render)
    return p


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    set_threads(args.threads)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
