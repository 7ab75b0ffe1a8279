"""Simulation harness: trajectories, noise injection, trials and result files."""
from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import DetectionFrame, generate_detections
from .config import TrialConfig
from .errors import ConfigError
from .filters import make_filter
from .grasp import pose_is_feasible, is_feasible, sample_feasible, state_to_pose, GraspState
from .observation import ObservationModel
from .se3 import HomogeneousTransform, Pose, axis_angle_to_matrix, position_error, rotation_error

# record columns first, in their fixed order; extras (config label, relative-pose errors) after
RAW_COLUMNS = ["trial", "t", "filter", "err_b", "err_q", "n_eff", "feasible", "wall_ms",
               "config", "rel_err_b", "rel_err_q"]
POSE_COLUMNS = ["t", "filter", "bx", "by", "bz", "qx", "qy", "qz",
                "rel_bx", "rel_by", "rel_bz", "rel_qx", "rel_qy", "rel_qz"]

TRAJECTORY_DEFAULTS = {
    "static": {"position": [0.0, 0.0, 100.0], "orientation": [0.6, 0.2, 0.1]},
    "line": {"position": [0.0, 0.0, 100.0], "orientation": [0.6, 0.2, 0.1], "velocity": [0.5, 0.0, 0.0]},
    "orbit": {"center": [0.0, 0.0, 100.0], "orientation": [0.6, 0.2, 0.1], "radius_mm": 10.0,
              "step_rad": 0.1, "spin_axis": [1.0, 0.0, 0.0], "spin_deg": 1.0},
}


class InvariantError(RuntimeError):
    """A filter produced output that violates one of its guarantees."""


# --- trajectories -----------------------------------------------------------

def validate_trajectory(spec) -> dict:
    """Normalize a trajectory spec (name or object with ``name``) into a full parameter dict."""
    if isinstance(spec, str):
        spec = {"name": spec}
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("trajectory must be a name or an object with a 'name'")
    name = spec["name"]
    if name not in TRAJECTORY_DEFAULTS:
        raise ConfigError(f"unknown trajectory {name!r}; choose from {sorted(TRAJECTORY_DEFAULTS)}")
    params = dict(TRAJECTORY_DEFAULTS[name])
    extra = set(spec) - set(params) - {"name"}
    if extra:
        raise ConfigError(f"trajectory {name!r}: unknown keys {sorted(extra)}")
    params.update({k: v for k, v in spec.items() if k != "name"})
    for k, v in params.items():
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"trajectory {name!r}: {k} must be finite")
        if arr.ndim == 1 and arr.shape != (3,):
            raise ConfigError(f"trajectory {name!r}: {k} must have 3 components")
    params["name"] = name
    return params


def generate_trajectory(spec, steps: int) -> list[Pose]:
    """End-effector poses in the left camera frame, one per step."""
    p = validate_trajectory(spec)
    R0 = axis_angle_to_matrix(np.asarray(p["orientation"], dtype=float))
    k = np.arange(steps, dtype=float)
    if p["name"] == "static":
        return [Pose.from_matrix(R0, np.asarray(p["position"], dtype=float))] * steps
    if p["name"] == "line":
        pos = np.asarray(p["position"], float) + k[:, None] * np.asarray(p["velocity"], float)
        return [Pose.from_matrix(R0, b) for b in pos]
    ang = k * p["step_rad"]
    pos = np.asarray(p["center"], float) + p["radius_mm"] * np.stack(
        [np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=1)
    axis = np.asarray(p["spin_axis"], float)
    axis = axis / np.linalg.norm(axis)
    spins = axis_angle_to_matrix(np.outer(k * np.deg2rad(p["spin_deg"]), axis))
    return [Pose.from_matrix(S @ R0, b) for S, b in zip(spins, pos)]


def perturb_ee_pose(pose: Pose, sigma_ep: float, sigma_eo_deg: float, rng) -> Pose:
    """Measured end-effector pose: Gaussian position noise and a rotation about the local y-axis."""
    if sigma_ep < 0 or sigma_eo_deg < 0:
        raise ValueError("noise levels must be nonnegative")
    # always draw four numbers so streams stay aligned across noise settings
    z = rng.standard_normal(4)
    b = pose.b + sigma_ep * z[:3]
    theta = np.deg2rad(sigma_eo_deg) * z[3]
    R = pose.rotation @ axis_angle_to_matrix(np.array([0.0, theta, 0.0]))
    return Pose.from_matrix(R, b)


def relative_pose(needle: Pose, ee: Pose) -> Pose:
    """Needle pose expressed in the end-effector frame."""
    return Pose.from_transform(ee.to_transform().inverse() @ needle.to_transform())


def relative_pose_error(tracked_needle: Pose, tracked_ee: Pose, gt_needle: Pose, gt_ee: Pose):
    a = relative_pose(tracked_needle, tracked_ee)
    b = relative_pose(gt_needle, gt_ee)
    return position_error(a.b, b.b), rotation_error(a.q, b.q)


# --- trials -----------------------------------------------------------------

@dataclass
class TrialResult:
    rows: list[dict]
    frames: list[DetectionFrame]
    gt_states: list[np.ndarray]
    mean_poses: dict = field(default_factory=dict)   # filter -> list of (needle Pose, ee Pose)
    init_acceptance: dict = field(default_factory=dict)


def trial_streams(seed, trial_index: int, n_filters: int):
    ss = np.random.SeedSequence([int(seed), int(trial_index)])
    children = ss.spawn(4 + n_filters)
    scene, det, ee, drift = (np.random.default_rng(c) for c in children[:4])
    return scene, det, ee, drift, children[4:]


def _build_filters(cfg: TrialConfig, model: ObservationModel, seeds):
    return [make_filter(spec.name, spec.filter_config(s), model, cfg.bounds)
            for spec, s in zip(cfg.filters, seeds)]


def _check_step(flt, res) -> None:
    if abs(res.weight_sum - 1.0) > 1e-9:
        raise InvariantError(f"{flt.name}: weights sum to {res.weight_sum!r}")
    if res.mean_state is not None and not is_feasible(res.mean_state.as_array(), flt.bounds):
        raise InvariantError(f"{flt.name}: mean state left the feasible box")


def run_filters(cfg: TrialConfig, frames: list[DetectionFrame], filter_seeds, on_step=None):
    """Run every configured filter over ``frames``; calls ``on_step(i, t, filter, result, wall_ms)``."""
    model = ObservationModel(cfg.rig, cfg.needle, cfg.observation)
    filters = _build_filters(cfg, model, filter_seeds)
    out = {f.name: [] for f in filters}
    for f in filters:
        f.initialize(frames[0].ee_pose)
    for i, frame in enumerate(frames):
        for f in filters:
            t0 = time.perf_counter()
            res = f.step(frame)
            wall = (time.perf_counter() - t0) * 1e3
            _check_step(f, res)
            out[f.name].append(res.mean_pose)
            if on_step is not None:
                on_step(i, frame.t, f, res, wall)
    acc = {f.name: f.init_acceptance for f in filters if hasattr(f, "init_acceptance")}
    return out, acc


def simulate_frames(cfg: TrialConfig, trial_index: int):
    """Ground-truth scene and detection frames for one trial."""
    exp = cfg.experiment
    scene, det_rng, ee_rng, drift_rng, filter_seeds = trial_streams(exp.seed, trial_index, len(cfg.filters))
    state = sample_feasible(cfg.bounds, 1, scene)[0]
    drift = None if exp.drift_cov_diag is None else np.sqrt(np.asarray(exp.drift_cov_diag, float))
    traj = generate_trajectory(exp.trajectory, exp.steps)
    frames, states, gt_needles = [], [], []
    for t, ee in enumerate(traj):
        if drift is not None and t > 0:
            state = np.clip(state + drift * drift_rng.standard_normal(4), cfg.bounds.lower, cfg.bounds.upper)
        needle = state_to_pose(state, ee, cfg.needle)
        measured = perturb_ee_pose(ee, exp.sigma_ep_mm, exp.sigma_eo_deg, ee_rng)
        frames.append(generate_detections(needle, cfg.rig, exp.detections, exp.sigma_n_px, det_rng,
                                          radius=cfg.needle.radius, span=cfg.needle.arc_span,
                                          t=t, ee_pose=measured))
        states.append(state.copy())
        gt_needles.append(needle)
    return frames, states, gt_needles, traj, filter_seeds


def run_trial(cfg: TrialConfig, trial_index: int) -> TrialResult:
    frames, states, gt_needles, traj, filter_seeds = simulate_frames(cfg, trial_index)
    rows = []
    poses = {}

    def record(i, t, flt, res, wall):
        gt = gt_needles[i]
        ee_meas = frames[i].ee_pose
        feasible = pose_is_feasible(res.mean_pose, ee_meas, cfg.bounds, cfg.needle)
        rel_b, rel_q = relative_pose_error(res.mean_pose, ee_meas, gt, traj[i])
        rows.append({
            "config": cfg.label, "trial": trial_index, "t": t, "filter": flt.name,
            "err_b": position_error(res.mean_pose.b, gt.b), "err_q": rotation_error(res.mean_pose.q, gt.q),
            "n_eff": res.n_eff, "feasible": bool(feasible), "wall_ms": wall,
            "rel_err_b": rel_b, "rel_err_q": rel_q,
        })
        poses.setdefault(flt.name, []).append((res.mean_pose, ee_meas))

    _, acc = run_filters(cfg, frames, filter_seeds, record)
    return TrialResult(rows, frames, states, poses, acc)


def replay_frames(cfg: TrialConfig, frames: list[DetectionFrame], trial_index: int = 0) -> dict:
    """Run filters over recorded frames with the same filter seeds a simulated trial would use."""
    if not frames:
        raise ValueError("no frames")
    *_, filter_seeds = trial_streams(cfg.experiment.seed, trial_index, len(cfg.filters))
    poses = {}

    def record(i, t, flt, res, wall):
        poses.setdefault(flt.name, []).append((res.mean_pose, frames[i].ee_pose))

    run_filters(cfg, frames, filter_seeds, record)
    return poses


# --- aggregation and output -------------------------------------------------

def summarize(rows: list[dict]) -> dict:
    """Nested ``{config: {filter: stats}}`` summary of raw rows."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(r["config"], {}).setdefault(r["filter"], []).append(r)
    out = {}
    for label, by_filter in groups.items():
        out[label] = {}
        for name, rs in by_filter.items():
            stats = {"rows": len(rs)}
            for key in ("err_b", "err_q", "wall_ms", "rel_err_b", "rel_err_q", "n_eff"):
                v = np.array([r[key] for r in rs], dtype=float)
                stats[f"{key}_mean"] = float(v.mean())
                stats[f"{key}_std"] = float(v.std())
            stats["feasibility_rate"] = float(np.mean([r["feasible"] for r in rs]))
            out[label][name] = stats
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{v:.9g}"
    return str(v)


def rows_to_csv(rows: list[dict], columns=RAW_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def pose_rows(poses: dict) -> list[dict]:
    rows = []
    for name, seq in poses.items():
        for t, (needle, ee) in enumerate(seq):
            rel = relative_pose(needle, ee)
            rows.append({"t": t, "filter": name,
                         **{k: float(v) for k, v in zip(("bx", "by", "bz"), needle.b)},
                         **{k: float(v) for k, v in zip(("qx", "qy", "qz"), needle.q)},
                         **{k: float(v) for k, v in zip(("rel_bx", "rel_by", "rel_bz"), rel.b)},
                         **{k: float(v) for k, v in zip(("rel_qx", "rel_qy", "rel_qz"), rel.q)}})
    return rows


def poses_to_csv(poses: dict) -> str:
    # repr keeps the full double so replays can be compared bitwise
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POSE_COLUMNS)
    for r in pose_rows(poses):
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in POSE_COLUMNS])
    return buf.getvalue()


def plot_rows(cfgs: list[TrialConfig], summary: dict) -> list[dict]:
    out = []
    for cfg in cfgs:
        for name, st in summary.get(cfg.label, {}).items():
            out.append({"config": cfg.label, "sigma_n_px": float(cfg.experiment.sigma_n_px), "filter": name,
                        "err_b_mean": st["err_b_mean"], "err_b_std": st["err_b_std"],
                        "err_q_mean": st["err_q_mean"], "err_q_std": st["err_q_std"]})
    return out


PLOT_COLUMNS = ["config", "sigma_n_px", "filter", "err_b_mean", "err_b_std", "err_q_mean", "err_q_std"]


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` via a ``.partial`` sibling and an atomic rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_benchmark(cfgs: list[TrialConfig], progress=None) -> tuple[list[dict], dict]:
    """Run every trial of every config; returns raw rows and the summary."""
    if not cfgs:
        raise ConfigError("empty config grid")
    labels = [c.label for c in cfgs]
    if len(set(labels)) != len(labels):
        raise ConfigError("config labels must be unique")
    rows = []
    for cfg in cfgs:
        for k in range(cfg.experiment.trials):
            rows.extend(run_trial(cfg, k).rows)
            if progress is not None:
                progress(cfg, k)
    return rows, summarize(rows)


def write_benchmark(out_dir, cfgs, rows, summary) -> dict:
    """Write raw CSV, summary JSON and plot CSV; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"configs": {c.label: {"trajectory": validate_trajectory(c.experiment.trajectory),
                                  "sigma_n_px": c.experiment.sigma_n_px,
                                  "sigma_ep_mm": c.experiment.sigma_ep_mm,
                                  "sigma_eo_deg": c.experiment.sigma_eo_deg,
                                  "steps": c.experiment.steps, "trials": c.experiment.trials,
                                  "seed": c.experiment.seed,
                                  "filters": [vars(f) for f in c.filters]} for c in cfgs}}
    paths = {"raw": out_dir / "raw.csv", "summary": out_dir / "summary.json", "plot": out_dir / "plot.csv"}
    texts = {"raw": rows_to_csv(rows),
             "summary": json.dumps({"summary": summary, "metadata": meta}, indent=2) + "\n",
             "plot": rows_to_csv(plot_rows(cfgs, summary), PLOT_COLUMNS)}
    # a failure on one file must not cost the others
    failed = []
    for key, path in paths.items():
        try:
            atomic_write(path, texts[key])
        except OSError as exc:
            failed.append(f"{path}: {exc.strerror or exc}")
    if failed:
        raise OSError("could not write " + "; ".join(failed))
    return paths
