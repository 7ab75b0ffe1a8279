"""Needle trackers.

Two constrained filters work directly in the (alpha, w, u, v) box:

* ``cPFrp`` - particle filter, clipped Gaussian random walk, stratified
  resampling when the effective sample size drops.
* ``cHFrp`` - histogram filter on a fixed random support; the predict step
  diffuses weight with a truncated Gaussian kernel.

Three baselines carry full needle poses instead:

* ``PF``    - unconstrained, particles follow the measured gripper motion.
* ``cPFrj`` - as ``PF`` but every propagated particle is redrawn until it
  passes the pose feasibility oracle.
* ``cHFrj`` - histogram filter whose support is collected once by rejection
  sampling poses from a box in the end-effector frame.

All filters share one :class:`~needletrack.observation.ObservationModel`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import DetectionFrame
from .ensemble import WeightedEnsemble, effective_particles, stratified_indices, stratified_resample
from .errors import InsufficientSamplesError
from .grasp import (
    GraspBounds,
    GraspState,
    NeedleSpec,
    ee_frame_in_needle,
    poses_feasible,
    sample_feasible,
    states_to_poses,
)
from .observation import ObservationModel, reweight
from .se3 import Pose, axis_angle_to_matrix, chordal_mean_rotation, matrix_to_axis_angle

DEFAULT_REPARAM_COV = (4e-4, 1.0, 1.6e-5, 4e-5)
DEFAULT_POSE_COV = (0.04, 0.04, 0.04, 1e-4, 1e-4, 1e-4)

__all__ = [
    "FilterConfig", "StepResult", "PoseBox", "PrefilterResult", "WeightedEnsemble",
    "CPFrp", "CHFrp", "PosePF", "CPFrj", "CHFrj", "FILTER_TYPES", "make_filter",
    "effective_particles", "stratified_resample", "rejection_prefilter",
]


@dataclass
class FilterConfig:
    n_candidates: int = 2000
    motion_cov_diag: tuple | None = None
    n_eff_threshold: float | None = None
    rng_seed: object = 0
    proposal_scale: float = 1.0
    max_retries: int = 100
    kernel_cutoff: float = 3.0
    residual_tol: float = 0.1

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be at least 1")
        if self.motion_cov_diag is not None and np.any(np.asarray(self.motion_cov_diag) < 0):
            raise ValueError("motion covariance diagonal must be nonnegative")
        thr = self.effective_threshold
        if not 1 <= thr <= self.n_candidates:
            raise ValueError("n_eff_threshold must lie in [1, n_candidates]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")

    @property
    def effective_threshold(self) -> float:
        if self.n_eff_threshold is None:
            return max(1.0, self.n_candidates / 2)
        return float(self.n_eff_threshold)

    def cov(self, default) -> np.ndarray:
        cov = np.asarray(self.motion_cov_diag if self.motion_cov_diag is not None else default, dtype=float)
        if cov.shape != (len(default),):
            raise ValueError(f"motion_cov_diag needs {len(default)} entries, got {cov.size}")
        return cov


@dataclass
class StepResult:
    mean_pose: Pose
    mean_state: GraspState | None
    n_eff: float
    weight_sum: float
    retries: int = 0
    extra: dict = field(default_factory=dict)


def _ee_matrices(pose: Pose):
    return pose.rotation, pose.b


class _Tracker:
    name = "base"
    constrained = False

    def __init__(self, cfg: FilterConfig, model: ObservationModel, bounds: GraspBounds | None = None):
        self.cfg = cfg
        self.model = model
        self.bounds = bounds or GraspBounds()
        self.needle: NeedleSpec = model.needle
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.weights: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.cfg.n_candidates


# --- reparameterized filters ------------------------------------------------

class _ReparamTracker(_Tracker):
    constrained = True

    def __init__(self, cfg, model, bounds=None):
        super().__init__(cfg, model, bounds)
        self.cov = cfg.cov(DEFAULT_REPARAM_COV)
        self.states: np.ndarray | None = None

    def initialize(self, ee_pose: Pose | None = None) -> None:
        self.states = sample_feasible(self.bounds, self.n, self.rng)
        self.weights = np.full(self.n, 1.0 / self.n)

    @property
    def ensemble(self) -> WeightedEnsemble:
        return WeightedEnsemble(self.states, self.weights)

    def _update(self, frame: DetectionFrame) -> float:
        R, t = states_to_poses(self.states, *_ee_matrices(frame.ee_pose), self.needle.radius)
        self.weights = self.model.weight_update(self.weights, R, t, frame)
        return effective_particles(self.weights)

    def _result(self, frame: DetectionFrame, n_eff: float) -> StepResult:
        # convex combination of in-box states; the clip only absorbs rounding
        mean = np.clip(self.weights @ self.states, self.bounds.lower, self.bounds.upper)
        R, t = states_to_poses(mean[None], *_ee_matrices(frame.ee_pose), self.needle.radius)
        return StepResult(Pose.from_matrix(R[0], t[0]), GraspState.from_array(mean), n_eff,
                          float(self.weights.sum()))


class CPFrp(_ReparamTracker):
    name = "cPFrp"

    def step(self, frame: DetectionFrame) -> StepResult:
        noise = self.rng.standard_normal(self.states.shape) * np.sqrt(self.cov)
        self.states = np.clip(self.states + noise, self.bounds.lower, self.bounds.upper)
        n_eff = self._update(frame)
        if n_eff < self.cfg.effective_threshold:
            idx = stratified_indices(self.weights, self.rng)
            self.states = self.states[idx]
            self.weights = np.full(self.n, 1.0 / self.n)
        return self._result(frame, n_eff)


class CHFrp(_ReparamTracker):
    name = "cHFrp"

    def initialize(self, ee_pose: Pose | None = None) -> None:
        super().initialize(ee_pose)
        self.transition = _kernels.hf_transition(
            np.ascontiguousarray(self.states), np.ascontiguousarray(self.cov), self.cfg.kernel_cutoff**2)

    def predict(self) -> None:
        w = self.transition.T @ self.weights
        self.weights = w / w.sum()

    def step(self, frame: DetectionFrame) -> StepResult:
        self.predict()
        n_eff = self._update(frame)
        return self._result(frame, n_eff)


# --- pose-state filters -----------------------------------------------------

def _pose_mean(R, t, w) -> Pose:
    return Pose.from_matrix(chordal_mean_rotation(R, w), w @ t)


class _PoseTracker(_Tracker):
    def __init__(self, cfg, model, bounds=None):
        super().__init__(cfg, model, bounds)
        self.cov = cfg.cov(DEFAULT_POSE_COV)
        self.R: np.ndarray | None = None
        self.t: np.ndarray | None = None
        self.prev_ee: Pose | None = None

    def _perturb(self, R, t):
        noise = self.rng.standard_normal((len(t), 6)) * np.sqrt(self.cov)
        return R @ axis_angle_to_matrix(noise[:, 3:]), t + noise[:, :3]

    def _transport(self, ee: Pose):
        delta = ee.to_transform() @ self.prev_ee.to_transform().inverse()
        R = delta.R @ self.R
        t = self.t @ delta.R.T + delta.t
        self.prev_ee = ee
        return R, t

    def _update_and_resample(self, frame: DetectionFrame) -> float:
        self.weights = self.model.weight_update(self.weights, self.R, self.t, frame)
        n_eff = effective_particles(self.weights)
        if n_eff < self.cfg.effective_threshold:
            idx = stratified_indices(self.weights, self.rng)
            self.R, self.t = self.R[idx], self.t[idx]
            self.weights = np.full(self.n, 1.0 / self.n)
        return n_eff

    def _result(self, n_eff: float, retries: int = 0) -> StepResult:
        return StepResult(_pose_mean(self.R, self.t, self.weights), None, n_eff,
                          float(self.weights.sum()), retries)


class PosePF(_PoseTracker):
    """Unconstrained pose-state particle filter."""

    name = "PF"

    def initialize(self, ee_pose: Pose) -> None:
        # same prior as the constrained filters, expressed as poses
        states = sample_feasible(self.bounds, self.n, self.rng)
        self.R, self.t = states_to_poses(states, *_ee_matrices(ee_pose), self.needle.radius)
        self.weights = np.full(self.n, 1.0 / self.n)
        self.prev_ee = ee_pose

    def step(self, frame: DetectionFrame) -> StepResult:
        R, t = self._transport(frame.ee_pose)
        self.R, self.t = self._perturb(R, t)
        return self._result(self._update_and_resample(frame))


@dataclass(frozen=True)
class PoseBox:
    """Axis-aligned box over the needle pose in the end-effector frame.

    The six coordinates are position (mm) followed by axis-angle (rad).
    """

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def matched(cls, bounds: GraspBounds, needle: NeedleSpec, n_samples: int = 50000, rng=0) -> PoseBox:
        """Bounding box of the feasible set's image in pose coordinates."""
        states = sample_feasible(bounds, n_samples, rng)
        corners = np.array(np.meshgrid(*zip(bounds.lower, bounds.upper))).reshape(4, -1).T
        states = np.vstack([states, corners])
        coords = relative_pose_coords(states, needle.radius)
        return cls(coords.min(axis=0), coords.max(axis=0))

    def scaled(self, k: float) -> PoseBox:
        c = 0.5 * (self.lower + self.upper)
        h = 0.5 * (self.upper - self.lower) * k
        return PoseBox(c - h, c + h)

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        x = self.lower + (self.upper - self.lower) * rng.random((n, 6))
        return axis_angle_to_matrix(x[:, 3:]), x[:, :3]


def relative_pose_coords(states: np.ndarray, radius: float) -> np.ndarray:
    """Needle pose in the end-effector frame as (position, axis-angle) rows."""
    R_ne, e = ee_frame_in_needle(states, radius)
    R_en = np.swapaxes(R_ne, -1, -2)
    t_en = -np.einsum("nij,nj->ni", R_en, e)
    return np.hstack([t_en, matrix_to_axis_angle(R_en, check=False)])


@dataclass
class PrefilterResult:
    R: np.ndarray
    t: np.ndarray
    attempts: int

    @property
    def accepted(self) -> int:
        return len(self.t)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


def rejection_prefilter(bounds: GraspBounds, ee_pose: Pose, n: int, max_attempts: int, rng,
                        box: PoseBox, needle: NeedleSpec, residual_tol: float = 0.1,
                        batch: int = 100_000) -> PrefilterResult:
    """Collect ``n`` feasible needle poses (camera frame) by box rejection sampling."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng)
    Ree, tee = _ee_matrices(ee_pose)
    Rs, ts = [], []
    got = attempts = 0
    while got < n and attempts < max_attempts:
        k = min(batch, max_attempts - attempts)
        R_rel, t_rel = box.sample(k, rng)
        R = Ree @ R_rel
        t = t_rel @ Ree.T + tee
        ok = poses_feasible(R, t, Ree, tee, bounds, needle.radius, residual_tol)
        idx = np.flatnonzero(ok)
        if got + len(idx) >= n:
            # count attempts only up to the n-th acceptance
            idx = idx[: n - got]
            k = int(idx[-1]) + 1
        attempts += k
        Rs.append(R[idx])
        ts.append(t[idx])
        got += len(idx)
    result = PrefilterResult(np.concatenate(Rs) if Rs else np.zeros((0, 3, 3)),
                             np.concatenate(ts) if ts else np.zeros((0, 3)), attempts)
    if got < n:
        raise InsufficientSamplesError(
            f"accepted {got} of {n} poses in {attempts} attempts", result, result.acceptance_rate)
    return result


class CPFrj(_PoseTracker):
    """Pose particle filter with rejection sampling on the motion model output."""

    name = "cPFrj"
    constrained = True

    def initialize(self, ee_pose: Pose) -> None:
        box = PoseBox.matched(self.bounds, self.needle).scaled(self.cfg.proposal_scale)
        res = rejection_prefilter(self.bounds, ee_pose, self.n, 10**9, self.rng, box, self.needle,
                                  self.cfg.residual_tol)
        self.R, self.t = res.R, res.t
        self.init_acceptance = res.acceptance_rate
        self.weights = np.full(self.n, 1.0 / self.n)
        self.prev_ee = ee_pose

    def _feasible(self, R, t, ee: Pose):
        return poses_feasible(R, t, *_ee_matrices(ee), self.bounds, self.needle.radius,
                              self.cfg.residual_tol)

    def step(self, frame: DetectionFrame) -> StepResult:
        ee = frame.ee_pose
        R0, t0 = self._transport(ee)
        R, t = self._perturb(R0, t0)
        pending = ~self._feasible(R, t, ee)
        retries = 0
        for _ in range(self.cfg.max_retries):
            idx = np.flatnonzero(pending)
            if len(idx) == 0:
                break
            retries += len(idx)
            Rn, tn = self._perturb(R0[idx], t0[idx])
            good = self._feasible(Rn, tn, ee)
            R[idx[good]], t[idx[good]] = Rn[good], tn[good]
            pending[idx[good]] = False
        w = self.weights.copy()
        if np.any(pending):
            # out of retries: keep the unperturbed (feasible) pose, drop its weight
            R[pending], t[pending] = R0[pending], t0[pending]
            w[pending] = 0.0
            w = w / w.sum() if w.sum() > 0 else np.full(self.n, 1.0 / self.n)
        self.R, self.t, self.weights = R, t, w
        n_eff = self._update_and_resample(frame)
        return self._result(n_eff, retries)


class CHFrj(_Tracker):
    """Histogram filter over rejection-sampled feasible poses fixed in the gripper frame."""

    name = "cHFrj"
    constrained = True

    def __init__(self, cfg, model, bounds=None):
        super().__init__(cfg, model, bounds)
        self.cov = cfg.cov(DEFAULT_POSE_COV)

    def initialize(self, ee_pose: Pose) -> None:
        box = PoseBox.matched(self.bounds, self.needle).scaled(self.cfg.proposal_scale)
        identity = Pose.identity()
        res = rejection_prefilter(self.bounds, identity, self.n, 10**9, self.rng, box, self.needle,
                                  self.cfg.residual_tol)
        self.R_rel, self.t_rel = res.R, res.t
        self.init_acceptance = res.acceptance_rate
        coords = np.hstack([self.t_rel, matrix_to_axis_angle(self.R_rel, check=False)])
        self.transition = _kernels.hf_transition(
            np.ascontiguousarray(coords), np.ascontiguousarray(self.cov), self.cfg.kernel_cutoff**2)
        self.weights = np.full(self.n, 1.0 / self.n)

    def step(self, frame: DetectionFrame) -> StepResult:
        w = self.transition.T @ self.weights
        self.weights = w / w.sum()
        Ree, tee = _ee_matrices(frame.ee_pose)
        R = Ree @ self.R_rel
        t = self.t_rel @ Ree.T + tee
        self.weights = self.model.weight_update(self.weights, R, t, frame)
        n_eff = effective_particles(self.weights)
        return StepResult(_pose_mean(R, t, self.weights), None, n_eff, float(self.weights.sum()))


FILTER_TYPES = {cls.name: cls for cls in (PosePF, CPFrp, CHFrp, CPFrj, CHFrj)}


def make_filter(name: str, cfg: FilterConfig, model: ObservationModel, bounds: GraspBounds | None = None):
    try:
        cls = FILTER_TYPES[name]
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(FILTER_TYPES)}") from None
    return cls(cfg, model, bounds)


def pose_weight_update(ensemble: WeightedEnsemble, frame: DetectionFrame, model: ObservationModel,
                       ee_pose: Pose) -> WeightedEnsemble:
    """Observation update for an ensemble of grasp states under a given end-effector pose."""
    R, t = states_to_poses(ensemble.states, *_ee_matrices(ee_pose), model.needle.radius)
    return WeightedEnsemble(ensemble.states, reweight(ensemble.weights, *model.batch(R, t, frame)))
