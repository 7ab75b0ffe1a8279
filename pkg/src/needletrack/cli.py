"""``needletrack`` command line: benchmark, trial, replay, convert.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 internal invariant breach.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .camera import detections_to_string, read_detections
from .config import apply_overrides, default_config_dict, expand_sweep, load_config_file, parse_config
from .errors import ConfigError
from .grasp import is_feasible, pose_to_state, states_to_poses, violated_bounds
from .harness import (
    InvariantError,
    atomic_write,
    poses_to_csv,
    replay_frames,
    rows_to_csv,
    run_benchmark,
    run_trial,
    write_benchmark,
)
from .se3 import Pose

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4


def _raw_config(args) -> dict:
    raw = load_config_file(args.config) if args.config else default_config_dict()
    sets = list(args.set or [])
    if args.seed is not None:
        sets.append(f"experiment.seed={args.seed}")
    return apply_overrides(raw, sets)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def cmd_benchmark(args) -> int:
    cfgs = expand_sweep(_raw_config(args))
    out = _out_dir(args)

    def progress(cfg, k):
        print(f"[{cfg.label}] trial {k + 1}/{cfg.experiment.trials}", file=sys.stderr)

    rows, summary = run_benchmark(cfgs, progress if not args.quiet else None)
    paths = write_benchmark(out, cfgs, rows, summary)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def cmd_trial(args) -> int:
    cfg = parse_config(_raw_config(args))
    out = _out_dir(args)
    res = run_trial(cfg, args.trial)
    atomic_write(out / "trial.csv", rows_to_csv(res.rows))
    atomic_write(out / "poses.csv", poses_to_csv(res.mean_poses))
    atomic_write(out / "detections.csv", detections_to_string(res.frames))
    for name in ("trial.csv", "poses.csv", "detections.csv"):
        print(f"{name.split('.')[0]}: {out / name}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = parse_config(_raw_config(args))
    try:
        with open(args.detections, newline="") as fh:
            frames = read_detections(fh, n_cameras=len(cfg.rig.cameras))
    except OSError as exc:
        raise OSError(f"cannot read {args.detections}: {exc.strerror}") from None
    out = _out_dir(args)
    poses = replay_frames(cfg, frames, args.trial)
    atomic_write(out / "poses.csv", poses_to_csv(poses))
    print(f"poses: {out / 'poses.csv'}")
    return EXIT_OK


def _floats(values, n, what):
    if len(values) != n:
        raise ConfigError(f"{what} needs {n} numbers, got {len(values)}")
    try:
        out = np.array([float(v) for v in values])
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{what}: values must be finite")
    return out


def _print_kv(key, values):
    if isinstance(values, (str, bool)):
        print(f"{key}={str(values).lower() if isinstance(values, bool) else values}")
    else:
        print(f"{key}=" + ",".join(repr(float(v)) for v in np.atleast_1d(values)))


def cmd_convert(args) -> int:
    cfg = parse_config(_raw_config(args))
    ee_vals = _floats(args.ee, 6, "--ee") if args.ee else np.zeros(6)
    ee = Pose(ee_vals[:3], ee_vals[3:])
    if args.kind == "state":
        s = _floats(args.values, 4, "state (alpha w u v)")
        if s[1] < 0 or not 0.0 <= s[3] <= 1.0:
            raise ConfigError("state: need w >= 0 and v in [0, 1]")
        feasible = bool(is_feasible(s, cfg.bounds))
        _print_kv("feasibility", feasible)
        if not feasible:
            _print_kv("violated", " ".join(violated_bounds(s, cfg.bounds)))
        # the pose of an out-of-bounds state is still well defined; print it for debugging
        R, t = states_to_poses(s[None], ee.rotation, ee.b, cfg.needle.radius)
        pose = Pose.from_matrix(R[0], t[0])
        _print_kv("b", pose.b)
        _print_kv("q", pose.q)
        if args.roundtrip:
            _print_kv("state", pose_to_state(pose, ee).as_array())
    else:
        p = _floats(args.values, 6, "pose (bx by bz qx qy qz)")
        state = pose_to_state(Pose(p[:3], p[3:]), ee).as_array()
        feasible = bool(is_feasible(state, cfg.bounds))
        _print_kv("state", state)
        _print_kv("feasibility", feasible)
        if not feasible:
            _print_kv("violated", " ".join(violated_bounds(state, cfg.bounds)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config (default: shipped config)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append",
                        help="dotted-path override, value parsed as JSON; repeatable")
    common.add_argument("--seed", type=int, help="master seed (same as --set experiment.seed=N)")

    p = argparse.ArgumentParser(prog="needletrack", description="In-hand suture needle tracking simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("benchmark", parents=[common], help="run all trials, write raw/summary/plot files")
    b.add_argument("--out", metavar="DIR", default="out")
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_benchmark)

    t = sub.add_parser("trial", parents=[common], help="run one trial, write rows, mean poses, detections")
    t.add_argument("--out", metavar="DIR", default="out")
    t.add_argument("--trial", type=int, default=0, help="trial index (selects the random streams)")
    t.set_defaults(func=cmd_trial)

    r = sub.add_parser("replay", parents=[common], help="run filters over a recorded detection CSV")
    r.add_argument("detections", metavar="DETECTIONS_CSV")
    r.add_argument("--out", metavar="DIR", default="out")
    r.add_argument("--trial", type=int, default=0, help="trial index whose filter streams to reuse")
    r.set_defaults(func=cmd_replay)

    c = sub.add_parser("convert", parents=[common], help="convert between a grasp state and a needle pose")
    c.add_argument("kind", choices=["state", "pose"])
    c.add_argument("values", nargs="+", help="alpha w u v | bx by bz qx qy qz")
    c.add_argument("--ee", nargs=6, metavar="X", help="end-effector pose bx by bz qx qy qz (default identity)")
    c.add_argument("--roundtrip", action="store_true", help="state input: also print the recovered state")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # ConfigError, DetectionFormatError, degenerate input
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
