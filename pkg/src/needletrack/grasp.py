"""The (alpha, w, u, v) grasp-state space of an in-hand circular needle.

``alpha`` picks the grasped point on the needle circle, and ``(w, u, v)`` is a
volume-uniform encoding of the spherical offset ``(d, theta, phi)`` from that
point to the end-effector origin::

    w = d**3        u = theta / (2 pi)        v = (cos(phi) + 1) / 2

In these coordinates the feasible grasp set is an axis-aligned box, so
sampling, motion clipping and averaging never leave it.

Frames: the needle lies in the xy-plane of its own frame, centred at the
origin; the grasped point is ``r (cos alpha, sin alpha, 0)``.  The
end-effector y-axis points from its origin to the grasped point and its
x-axis follows the needle tangent at ``alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InfeasibleStateError
from .se3 import Pose, axis_angle_to_matrix, relative_ee_in_needle

TWO_PI = 2.0 * np.pi
STATE_NAMES = ("alpha", "w", "u", "v")


@dataclass(frozen=True)
class NeedleSpec:
    radius: float = 5.4
    arc_span: float = np.pi

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("needle radius must be positive")
        if not 0 < self.arc_span <= TWO_PI:
            raise ValueError("arc span must lie in (0, 2pi]")


@dataclass(frozen=True)
class GraspBounds:
    """Limits of the intermediate parameters; the alpha range is fixed."""

    d_min: float = 1.0
    d_max: float = 4.0
    theta_min: float = 0.0
    theta_max: float = TWO_PI
    phi_min: float = np.pi / 4
    phi_max: float = 3 * np.pi / 4

    def __post_init__(self):
        if not self.d_min > 0:
            raise ValueError("d_min must be positive")
        if self.d_min > self.d_max or self.theta_min > self.theta_max or self.phi_min > self.phi_max:
            raise ValueError("lower bounds must not exceed upper bounds")
        if self.phi_min < 0 or self.phi_max > np.pi:
            raise ValueError("phi bounds must lie in [0, pi]")
        if self.theta_max - self.theta_min > TWO_PI + 1e-12:
            raise ValueError("theta range wider than a full turn")

    @property
    def lower(self) -> np.ndarray:
        return np.array([
            np.pi / 2,
            self.d_min**3,
            self.theta_min / TWO_PI,
            0.5 * (np.cos(self.phi_max) + 1.0),
        ])

    @property
    def upper(self) -> np.ndarray:
        return np.array([
            3 * np.pi / 2,
            self.d_max**3,
            self.theta_max / TWO_PI,
            0.5 * (np.cos(self.phi_min) + 1.0),
        ])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class GraspState:
    alpha: float
    w: float
    u: float
    v: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("grasp state components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.w, self.u, self.v], dtype=float)

    @classmethod
    def from_array(cls, a) -> GraspState:
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(*(float(x) for x in a))


@dataclass(frozen=True)
class IntermediateParams:
    alpha: float
    d: float
    theta: float
    phi: float


def intermediate_to_reparam(p: IntermediateParams) -> tuple[float, float, float]:
    if not 0.0 <= p.phi <= np.pi:
        raise ValueError(f"phi={p.phi} outside [0, pi]")
    if p.d < 0:
        raise ValueError("d must be nonnegative")
    return p.d**3, p.theta / TWO_PI, 0.5 * (np.cos(p.phi) + 1.0)


def reparam_to_intermediate(w: float, u: float, v: float, alpha: float = np.pi) -> IntermediateParams:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"v={v} outside [0, 1]")
    if w < 0:
        raise ValueError("w must be nonnegative")
    return IntermediateParams(alpha, float(np.cbrt(w)), TWO_PI * u, float(np.arccos(2.0 * v - 1.0)))


def _as_state_array(s) -> np.ndarray:
    if isinstance(s, GraspState):
        return s.as_array()
    return np.asarray(s, dtype=float)


def is_feasible(s, bounds: GraspBounds, tol: float = 0.0):
    """Closed-box membership; returns a bool array for stacked states."""
    a = _as_state_array(s)
    ok = np.all((a >= bounds.lower - tol) & (a <= bounds.upper + tol), axis=-1)
    return bool(ok) if np.ndim(ok) == 0 else ok


def violated_bounds(s, bounds: GraspBounds) -> list[str]:
    a = _as_state_array(s)
    out = []
    for name, x, lo, hi in zip(STATE_NAMES, a, bounds.lower, bounds.upper):
        if x < lo:
            out.append(f"{name}={x:.9g} < {name}_min={lo:.9g}")
        elif x > hi:
            out.append(f"{name}={x:.9g} > {name}_max={hi:.9g}")
    return out


def sample_feasible(bounds: GraspBounds, n: int, rng=None) -> np.ndarray:
    """Draw ``n`` states uniformly from the feasible box, shape (n, 4).

    ``rng`` is a numpy Generator or anything ``default_rng`` accepts.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng)
    lo, hi = bounds.lower, bounds.upper
    return lo + (hi - lo) * rng.random((n, 4))


def clip_motion(s, a, noise, bounds: GraspBounds):
    out = np.clip(_as_state_array(s) + np.asarray(a, dtype=float) + np.asarray(noise, dtype=float),
                  bounds.lower, bounds.upper)
    return GraspState.from_array(out) if isinstance(s, GraspState) else out


def weighted_mean_state(ensemble) -> GraspState:
    states = np.asarray(ensemble.states, dtype=float)
    weights = np.asarray(ensemble.weights, dtype=float)
    if states.shape[0] == 0:
        raise ValueError("empty ensemble")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be normalized")
    return GraspState.from_array(weights @ states)


# --- state <-> pose -------------------------------------------------------

def ee_frame_in_needle(states: np.ndarray, radius: float):
    """End-effector rotation (n,3,3) and origin (n,3) in the needle frame."""
    S = np.atleast_2d(states)
    alpha, w, u, v = S.T
    d = np.cbrt(w)
    theta = TWO_PI * u
    phi = np.arccos(np.clip(2.0 * v - 1.0, -1.0, 1.0))
    sp = np.sin(phi)
    offset = np.stack([sp * np.cos(theta), sp * np.sin(theta), np.cos(phi)], axis=-1)
    g = radius * np.stack([np.cos(alpha), np.sin(alpha), np.zeros_like(alpha)], axis=-1)
    e = g + d[:, None] * offset
    y = -offset
    tangent = np.stack([-np.sin(alpha), np.cos(alpha), np.zeros_like(alpha)], axis=-1)
    x = tangent - np.sum(tangent * y, axis=-1, keepdims=True) * y
    nx = np.linalg.norm(x, axis=-1)
    bad = nx < 1e-9
    if np.any(bad):
        # tangent parallel to y: roll from the needle normal instead
        zn = np.array([0.0, 0.0, 1.0])
        alt = zn - y[bad, 2:3] * y[bad]
        x[bad] = alt
        nx[bad] = np.linalg.norm(alt, axis=-1)
    x = x / nx[:, None]
    z = np.cross(x, y)
    R_ne = np.stack([x, y, z], axis=-1)
    return R_ne, e


def states_to_poses(states: np.ndarray, ee_R: np.ndarray, ee_t: np.ndarray, radius: float):
    """Needle rotations (n,3,3) and positions (n,3) in the camera frame."""
    R_ne, e = ee_frame_in_needle(states, radius)
    R_cn = ee_R @ np.swapaxes(R_ne, -1, -2)
    t_cn = ee_t - np.einsum("nij,nj->ni", R_cn, e)
    return R_cn, t_cn


def state_to_pose(s, ee_pose_cam: Pose, needle: NeedleSpec, bounds: GraspBounds | None = None) -> Pose:
    a = _as_state_array(s)
    bounds = bounds or GraspBounds()
    if not is_feasible(a, bounds):
        raise InfeasibleStateError("; ".join(violated_bounds(a, bounds)))
    R, t = states_to_poses(a[None], ee_pose_cam.rotation, ee_pose_cam.b, needle.radius)
    return Pose.from_matrix(R[0], t[0])


def grasped_point_in_needle_frame(p_ne: Pose) -> np.ndarray:
    """Intersection of the end-effector y-axis with the needle plane."""
    y = p_ne.rotation[:, 1]
    if abs(y[2]) <= 1e-9:
        raise DegenerateGeometryError("end-effector y-axis is parallel to the needle plane")
    beta = -p_ne.b[2] / y[2]
    g = p_ne.b + beta * y
    g[2] = 0.0
    return g


def _wrap_from(angle, start):
    return start + np.mod(angle - start, TWO_PI)


def poses_to_states(R_cn, t_cn, ee_R, ee_t, bounds: GraspBounds | None = None):
    """Batched inverse map.

    Returns ``(states, ok, e, y)`` where ``ok`` flags non-degenerate rows and
    ``e``/``y`` are the end-effector origin and y-axis in the needle frame.
    """
    R_cn = np.asarray(R_cn, dtype=float).reshape(-1, 3, 3)
    t_cn = np.asarray(t_cn, dtype=float).reshape(-1, 3)
    Rt = np.swapaxes(R_cn, -1, -2)
    R_ne = Rt @ ee_R
    e = np.einsum("nij,nj->ni", Rt, ee_t - t_cn)
    y = R_ne[:, :, 1]
    ok = np.abs(y[:, 2]) > 1e-9
    yz = np.where(ok, y[:, 2], 1.0)
    beta = -e[:, 2] / yz
    g = e + beta[:, None] * y
    alpha = np.arctan2(g[:, 1], g[:, 0])
    # branch cut at 0, the middle of the excluded half circle, so rounding just
    # past either bound stays near it instead of jumping by a full turn
    alpha = np.where(alpha < 0.0, alpha + TWO_PI, alpha)
    bge = e - g
    d = np.linalg.norm(bge, axis=-1)
    ok &= d > 1e-9
    dsafe = np.where(d > 0, d, 1.0)
    rho = np.hypot(bge[:, 0], bge[:, 1])
    # azimuth is undefined on the pole; pin it to zero
    theta = np.where(rho > 1e-12 * dsafe, np.arctan2(bge[:, 1], bge[:, 0]), 0.0)
    if bounds is None:
        theta = _wrap_from(theta, 0.0)
    else:
        # cut opposite the middle of the allowed azimuth range
        theta = _wrap_from(theta, 0.5 * (bounds.theta_min + bounds.theta_max) - np.pi)
    phi = np.arccos(np.clip(bge[:, 2] / dsafe, -1.0, 1.0))
    states = np.stack([alpha, d**3, theta / TWO_PI, 0.5 * (np.cos(phi) + 1.0)], axis=-1)
    return states, ok, e, y


def pose_to_state(needle_pose_cam: Pose, ee_pose_cam: Pose, bounds: GraspBounds | None = None) -> GraspState:
    """Recover the grasp state of a needle pose; the result may be out of bounds."""
    states, ok, e, y = poses_to_states(
        needle_pose_cam.rotation, needle_pose_cam.b, ee_pose_cam.rotation, ee_pose_cam.b, bounds
    )
    if not ok[0]:
        if abs(y[0, 2]) <= 1e-9:
            raise DegenerateGeometryError("end-effector y-axis is parallel to the needle plane")
        raise DegenerateGeometryError("end-effector origin coincides with the grasped point")
    return GraspState.from_array(states[0])


# --- pose-state feasibility oracle ---------------------------------------

def grasp_residuals(states, e, y, radius):
    """Distance from each end-effector y-axis line to the needle point at alpha."""
    alpha = states[:, 0]
    c = radius * np.stack([np.cos(alpha), np.sin(alpha), np.zeros_like(alpha)], axis=-1)
    rel = c - e
    perp = rel - np.sum(rel * y, axis=-1, keepdims=True) * y
    return np.linalg.norm(perp, axis=-1)


def poses_feasible(R_cn, t_cn, ee_R, ee_t, bounds: GraspBounds, radius: float,
                   residual_tol: float = 0.1, bound_tol: float = 1e-6) -> np.ndarray:
    """Feasibility of needle pose-states relative to a given end-effector pose.

    A pose is feasible when the inverse map is non-degenerate, the recovered
    state lies in the box, and the end-effector y-axis passes within
    ``residual_tol`` mm of the needle point it is supposed to grasp.
    """
    states, ok, e, y = poses_to_states(R_cn, t_cn, ee_R, ee_t, bounds)
    ok &= is_feasible(states, bounds, tol=bound_tol)
    ok &= grasp_residuals(states, e, y, radius) < residual_tol
    return ok


def pose_is_feasible(needle_pose: Pose, ee_pose: Pose, bounds: GraspBounds, needle: NeedleSpec,
                     residual_tol: float = 0.1) -> bool:
    return bool(poses_feasible(needle_pose.rotation, needle_pose.b, ee_pose.rotation, ee_pose.b,
                               bounds, needle.radius, residual_tol)[0])


def grasp_line_distance(needle_pose: Pose, ee_pose: Pose, state, radius: float) -> float:
    """Distance (mm) from the end-effector y-axis line to the grasped needle point."""
    a = _as_state_array(state)
    p_ne = relative_ee_in_needle(needle_pose, ee_pose)
    y = axis_angle_to_matrix(p_ne.q)[:, 1]
    return float(grasp_residuals(a[None], p_ne.b[None], y[None], radius)[0])
