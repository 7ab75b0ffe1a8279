"""End-to-end acceptance criteria 1-8.

Each test records one PASS/FAIL line, shown in the pytest terminal summary
(or printed directly when the file is run as a script).
"""
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from needletrack.config import apply_overrides, default_config_dict, parse_config
from needletrack.ensemble import effective_particles, stratified_indices
from needletrack.filters import PoseBox, rejection_prefilter
from needletrack.errors import InsufficientSamplesError
from needletrack.grasp import (
    GraspBounds, NeedleSpec, ee_frame_in_needle, is_feasible, pose_is_feasible, pose_to_state,
    sample_feasible, state_to_pose, states_to_poses,
)
from needletrack.harness import run_filters, run_trial, simulate_frames
from needletrack.se3 import Pose, chordal_mean_rotation
from conftest import random_rotvecs

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

BOUNDS, NEEDLE = GraspBounds(), NeedleSpec()


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def config(filters, *sets, n=2000):
    raw = default_config_dict()
    raw["filters"] = [{"name": f, "n": n} for f in filters]
    return parse_config(apply_overrides(raw, list(sets)))


def run_rows(cfg, trials, on_result=None):
    rows = []
    for k in range(trials):
        res = run_trial(cfg, k)
        rows.extend(res.rows)
        if on_result is not None:
            on_result(res)
    return rows


def mean_of(rows, name, key):
    return float(np.mean([r[key] for r in rows if r["filter"] == name]))


def test_criterion_1_feasibility():
    t0 = time.perf_counter()
    cfg = config(["PF", "cPFrp", "cHFrp"], "experiment.sigma_n_px=5", "experiment.sigma_ep_mm=2",
                 "experiment.sigma_eo_deg=10", "experiment.trials=20", "experiment.steps=100")
    rows = run_rows(cfg, 20)
    rate = {f: float(np.mean([r["feasible"] for r in rows if r["filter"] == f])) for f in ("PF", "cPFrp", "cHFrp")}
    elapsed = time.perf_counter() - t0
    ok = rate["cPFrp"] == 1.0 and rate["cHFrp"] == 1.0 and rate["PF"] < 1.0 and elapsed <= 300
    report(1, ok, f"feasible rate cPFrp={rate['cPFrp']:.4f} cHFrp={rate['cHFrp']:.4f} "
                  f"PF={rate['PF']:.4f} ({len(rows)} rows, {elapsed:.0f}s)")


def test_criterion_2_error_ordering():
    t0 = time.perf_counter()
    parts, ok = [], True
    for sn in (3, 4, 5):
        cfg = config(["PF", "cPFrp", "cHFrp"], f"experiment.sigma_n_px={sn}", "experiment.trials=10")
        rows = run_rows(cfg, 10)
        e = {f: (mean_of(rows, f, "err_b"), mean_of(rows, f, "err_q")) for f in ("PF", "cPFrp", "cHFrp")}
        good = (e["cPFrp"][0] < e["PF"][0] and e["cPFrp"][1] < e["PF"][1]
                and e["cPFrp"][0] <= e["cHFrp"][0] and e["cPFrp"][1] <= e["cHFrp"][1])
        ok &= good
        parts.append(f"sn={sn}: " + " ".join(f"{f}=({b:.2f}mm,{q:.3f}rad)" for f, (b, q) in e.items()))
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 900
    report(2, ok, "; ".join(parts) + f" ({elapsed:.0f}s)")


def test_criterion_3_runtime_gap():
    t0 = time.perf_counter()
    box = PoseBox.matched(BOUNDS, NEEDLE)
    try:
        acc10 = rejection_prefilter(BOUNDS, Pose.identity(), 10**6, 10**6, 0, box.scaled(10), NEEDLE).acceptance_rate
    except InsufficientSamplesError as exc:
        acc10 = exc.acceptance_rate
    # the oversized box only changes the one-off support collection; per-frame cost comes
    # from redrawing motion-model outputs until they pass the oracle
    cfg = config(["cPFrp", "cPFrj"], "experiment.trials=5")
    rows = run_rows(cfg, 5)
    ratio = mean_of(rows, "cPFrj", "wall_ms") / mean_of(rows, "cPFrp", "wall_ms")
    elapsed = time.perf_counter() - t0
    report(3, ratio >= 5 and elapsed <= 1200,
           f"wall_ms cPFrj/cPFrp = {ratio:.1f} (cPFrp {mean_of(rows, 'cPFrp', 'wall_ms'):.1f} ms/frame); "
           f"10x box acceptance {acc10:.1e} ({elapsed:.0f}s)")


def test_criterion_4_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    n = 10_000
    s = sample_feasible(BOUNDS, n, rng)
    rot = random_rotvecs(rng, n)
    pos = rng.uniform(-50, 50, (n, 3))
    err = 0.0
    for i in range(n):
        ee = Pose(pos[i], rot[i])
        back = pose_to_state(state_to_pose(s[i], ee, NEEDLE, BOUNDS), ee, BOUNDS).as_array()
        d = np.abs(back - s[i])
        d[2] = min(d[2], 1 - d[2])  # azimuth fraction is periodic
        err = max(err, float(d.max()))
    elapsed = time.perf_counter() - t0
    report(4, err <= 1e-9 and elapsed < 10, f"max |state error| {err:.1e} over {n} states ({elapsed:.2f}s)")


def test_criterion_5_convexity():
    rng = np.random.default_rng(5)
    a, b = sample_feasible(BOUNDS, 1000, rng), sample_feasible(BOUNDS, 1000, rng)
    lam = rng.random((1000, 1))
    combos_ok = bool(is_feasible(lam * a + (1 - lam) * b, BOUNDS).all())
    # two grasps at opposite ends of the arc: averaging their poses leaves the gripper
    # holding empty space, averaging their states does not
    ee = Pose([0, 0, 100], [0.6, 0.2, 0.1])
    pair = np.array([[np.pi / 2 + 0.05, 27.0, 0.3, 0.8], [3 * np.pi / 2 - 0.05, 27.0, 0.3, 0.8]])
    R, t = states_to_poses(pair, ee.rotation, ee.b, NEEDLE.radius)
    pose_mean = Pose.from_matrix(chordal_mean_rotation(R, np.array([0.5, 0.5])), t.mean(axis=0))
    R_s, t_s = states_to_poses(pair.mean(axis=0)[None], ee.rotation, ee.b, NEEDLE.radius)
    members_ok = all(pose_is_feasible(Pose.from_matrix(R[i], t[i]), ee, BOUNDS, NEEDLE) for i in range(2))
    pose_mean_bad = not pose_is_feasible(pose_mean, ee, BOUNDS, NEEDLE)
    state_mean_ok = pose_is_feasible(Pose.from_matrix(R_s[0], t_s[0]), ee, BOUNDS, NEEDLE)
    ok = combos_ok and members_ok and pose_mean_bad and state_mean_ok
    report(5, ok, f"1000 convex combos feasible={combos_ok}; counterexample: members feasible={members_ok}, "
                  f"pose mean infeasible={pose_mean_bad}, state mean feasible={state_mean_ok}")


def _offset_chi2(w, u, v):
    """Chi-square of 3D grasp offsets against a volume-uniform spherical shell sector."""
    s = np.column_stack([np.full(len(w), np.pi), w, u, v])
    _, e = ee_frame_in_needle(s, NEEDLE.radius)
    off = e - NEEDLE.radius * np.array([-1.0, 0.0, 0.0])
    r = np.linalg.norm(off, axis=1)
    k = 4
    lo, hi = BOUNDS.lower, BOUNDS.upper
    shell = np.clip(((r**3 - lo[1]) / (hi[1] - lo[1]) * k).astype(int), 0, k - 1)
    band = np.clip((((off[:, 2] / r + 1) / 2 - lo[3]) / (hi[3] - lo[3]) * k).astype(int), 0, k - 1)
    az = np.mod(np.arctan2(off[:, 1], off[:, 0]), 2 * np.pi)
    sector = np.clip((az / (2 * np.pi) * k).astype(int), 0, k - 1)
    counts = np.bincount((shell * k + band) * k + sector, minlength=k**3)
    return stats.chisquare(counts).pvalue


def test_criterion_6_sampling_bias():
    rng = np.random.default_rng(6)
    n = 10_000
    s = sample_feasible(BOUNDS, n, rng)
    lo, hi = BOUNDS.lower, BOUNDS.upper
    ks = [stats.kstest((s[:, i] - lo[i]) / (hi[i] - lo[i]), "uniform").pvalue for i in (1, 2, 3)]
    p_rep = _offset_chi2(s[:, 1], s[:, 2], s[:, 3])
    # naive: d, theta, phi each uniform on their intervals
    d = rng.uniform(BOUNDS.d_min, BOUNDS.d_max, n)
    th = rng.uniform(BOUNDS.theta_min, BOUNDS.theta_max, n)
    ph = rng.uniform(BOUNDS.phi_min, BOUNDS.phi_max, n)
    p_naive = _offset_chi2(d**3, th / (2 * np.pi), (np.cos(ph) + 1) / 2)
    ok = min(ks) > 0.01 and p_rep > 0.01 and p_naive < 0.001
    report(6, ok, "KS p(w,u,v)=" + ",".join(f"{p:.3f}" for p in ks)
           + f"; shell chi2 p reparam={p_rep:.3f} naive={p_naive:.1e}")


def test_criterion_7_machinery():
    # copy counts
    rng = np.random.default_rng(7)
    n, reps = 20, 10_000
    w = rng.dirichlet(np.ones(n))
    counts = np.zeros(n)
    for _ in range(reps):
        counts += np.bincount(stratified_indices(w, rng), minlength=n)
    z = np.abs(counts / reps - n * w) / np.sqrt(n * w * (1 - w) / reps)
    counts_ok = bool(np.all(z <= 3))
    closed = (effective_particles(np.full(8, 1 / 8)) == pytest.approx(8) and effective_particles([0, 1.0, 0]) == 1
              and effective_particles([0.5, 0.5, 0, 0]) == 2)
    # weight sums after every step of a full default benchmark run
    cfg = parse_config(default_config_dict())
    worst, steps = 0.0, 0
    for k in range(cfg.experiment.trials):
        frames, *_, seeds = simulate_frames(cfg, k)

        def on_step(i, t, flt, res, wall):
            nonlocal worst, steps
            worst = max(worst, abs(res.weight_sum - 1.0), abs(float(flt.weights.sum()) - 1.0))
            steps += 1

        run_filters(cfg, frames, seeds, on_step)
    ok = counts_ok and closed and worst <= 1e-9
    report(7, ok, f"copy counts max z={z.max():.2f}; closed forms={closed}; "
                  f"max |sum w - 1| = {worst:.1e} over {steps} filter steps")


def test_criterion_8_relative_pose():
    def run(sets):
        cfg = config(["cPFrp"], "experiment.trials=20", *sets)
        rows = run_rows(cfg, 20)
        return mean_of(rows, "cPFrp", "err_b"), mean_of(rows, "cPFrp", "rel_err_b")

    abs_noisy, rel_noisy = run(["experiment.sigma_ep_mm=2", "experiment.sigma_eo_deg=10"])
    _, rel_clean = run([])
    ok = rel_noisy <= abs_noisy and rel_noisy <= 1.25 * rel_clean
    report(8, ok, f"noisy ee: rel {rel_noisy:.3f} mm vs abs {abs_noisy:.3f} mm; "
                  f"rel vs clean ee {rel_clean:.3f} mm (ratio {rel_noisy / rel_clean:.2f})")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
