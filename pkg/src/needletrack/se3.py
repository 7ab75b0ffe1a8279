"""Rigid-body transform helpers.

Rotations are carried either as 3x3 matrices or as axis-angle vectors whose
norm is the rotation angle.  Every function accepts a single rotation or a
stacked batch with leading dimensions, so the filters can push whole particle
sets through without Python loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-12
_PI_TIE = 1e-12
_ORTHO_TOL = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")


def _tie_break(axis: np.ndarray) -> np.ndarray:
    """Flip axes so the first nonzero of (z, y, x) is nonnegative."""
    axis = np.array(axis, dtype=float, copy=True)
    flat = axis.reshape(-1, 3)
    for row in flat:
        for k in (2, 1, 0):
            if abs(row[k]) > _PI_TIE:
                if row[k] < 0:
                    row *= -1.0
                break
    return flat.reshape(axis.shape)


def canonicalize_axis_angle(q: np.ndarray) -> np.ndarray:
    """Wrap the angle into [0, pi], flipping the axis when it exceeds pi.

    Half-turns are ambiguous in sign; the representative whose first nonzero
    component in (z, y, x) order is nonnegative is returned.
    """
    q = np.asarray(q, dtype=float)
    _check_finite(q, "axis-angle")
    theta = np.linalg.norm(q, axis=-1, keepdims=True)
    safe = np.where(theta > 0, theta, 1.0)
    axis = q / safe
    wrapped = np.mod(theta, 2 * np.pi)
    flip = wrapped > np.pi
    axis = np.where(flip, -axis, axis)
    wrapped = np.where(flip, 2 * np.pi - wrapped, wrapped)
    half = np.abs(wrapped - np.pi) < _PI_TIE
    if np.any(half):
        wrapped = np.where(half, np.pi, wrapped)
        axis = np.where(half, _tie_break(axis), axis)
    out = np.where(theta > 0, axis * wrapped, 0.0)
    # already-canonical inputs pass through untouched so the map is idempotent
    untouched = (theta < np.pi - _PI_TIE)
    return np.where(untouched, q, out)


def axis_angle_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, batched over leading dimensions."""
    q = np.asarray(q, dtype=float)
    _check_finite(q, "axis-angle")
    theta = np.linalg.norm(q, axis=-1)[..., None, None]
    small = theta < 1e-6
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    # series branch avoids 0/0 near the identity
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = skew(q)
    eye = np.broadcast_to(np.eye(3), k.shape)
    out = eye + a * k + b * (k @ k)
    tiny = theta[..., 0, 0] < _SMALL_ANGLE
    if np.any(tiny):
        out = np.where(tiny[..., None, None], eye, out)
    return out


def matrix_to_axis_angle(R: np.ndarray, check: bool = True) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix` with angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    _check_finite(R, "rotation matrix")
    if check:
        err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(initial=0.0)
        if err > _ORTHO_TOL or np.any(np.linalg.det(R) < 0):
            raise ValueError(f"matrix is not a rotation (orthonormality error {err:.3g})")
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    sv = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    s = np.linalg.norm(sv, axis=-1)
    theta = np.arctan2(s, c)

    # small/moderate angles: sv = sin(theta) * axis
    ratio = np.where(s > _SMALL_ANGLE, theta / np.where(s > 0, s, 1.0), 1.0)
    q = sv * ratio[..., None]

    obtuse = c < 0
    if np.any(obtuse):
        # (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T, well conditioned near pi
        B = 0.5 * (R + np.swapaxes(R, -1, -2)) - c[..., None, None] * np.eye(3)
        diag = np.diagonal(B, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        col = np.take_along_axis(B, k[..., None, None].repeat(3, axis=-1), axis=-1)[..., 0]
        axis = col / np.linalg.norm(col, axis=-1, keepdims=True)
        sign = np.sign(np.sum(axis * sv, axis=-1))
        sign = np.where(s > 1e-15, sign, 1.0)
        axis = axis * np.where(sign == 0, 1.0, sign)[..., None]
        near_half = s <= 1e-15
        if np.any(near_half):
            axis = np.where(near_half[..., None], _tie_break(axis), axis)
        q = np.where(obtuse[..., None], axis * theta[..., None], q)
    return q


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of rotation matrices, in [0, pi]."""
    R = np.asarray(R, dtype=float)
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    sv = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    return np.arctan2(np.linalg.norm(sv, axis=-1), c)


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Scalar-last unit quaternions (x, y, z, w), Shepperd's method."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    cand = np.stack([d[..., 0], d[..., 1], d[..., 2], tr], axis=-1)
    k = np.argmax(cand, axis=-1)
    q = np.empty(R.shape[:-2] + (4,))
    m = k == 3
    q[m, 3] = 1 + tr[m]
    q[m, 0] = R[m, 2, 1] - R[m, 1, 2]
    q[m, 1] = R[m, 0, 2] - R[m, 2, 0]
    q[m, 2] = R[m, 1, 0] - R[m, 0, 1]
    for i in range(3):
        j, l = (i + 1) % 3, (i + 2) % 3
        m = k == i
        q[m, i] = 1 + 2 * R[m, i, i] - tr[m]
        q[m, j] = R[m, j, i] + R[m, i, j]
        q[m, l] = R[m, l, i] + R[m, i, l]
        q[m, 3] = R[m, l, j] - R[m, j, l]
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - z * w)
    out[..., 0, 2] = 2 * (x * z + y * w)
    out[..., 1, 0] = 2 * (x * y + z * w)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - x * w)
    out[..., 2, 0] = 2 * (x * z - y * w)
    out[..., 2, 1] = 2 * (y * z + x * w)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def chordal_mean_rotation(R: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted rotation average: principal eigenvector of sum w q q^T."""
    quats = matrix_to_quaternion(R)
    M = np.einsum("n,ni,nj->ij", np.asarray(weights, dtype=float), quats, quats)
    _, vecs = np.linalg.eigh(M)
    return quaternion_to_matrix(vecs[:, -1])


@dataclass(frozen=True)
class HomogeneousTransform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        _check_finite(R, "rotation")
        _check_finite(t, "translation")
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9 or abs(np.linalg.det(R) - 1.0) >= 1e-9:
            raise ValueError("rotation block is not orthonormal")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> HomogeneousTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> HomogeneousTransform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> HomogeneousTransform:
        return HomogeneousTransform(self.R.T, -self.R.T @ self.t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def __matmul__(self, other: HomogeneousTransform) -> HomogeneousTransform:
        return compose(self, other)


def compose(A: HomogeneousTransform, B: HomogeneousTransform) -> HomogeneousTransform:
    return HomogeneousTransform(A.R @ B.R, A.R @ B.t + A.t)


@dataclass(frozen=True)
class Pose:
    """Position ``b`` (mm) and canonical axis-angle orientation ``q`` (rad)."""

    b: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float).reshape(3)
        q = np.array(self.q, dtype=float).reshape(3)
        _check_finite(b, "position")
        q = canonicalize_axis_angle(q)
        b.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, R: np.ndarray, t: np.ndarray) -> Pose:
        return cls(t, matrix_to_axis_angle(R))

    @classmethod
    def from_transform(cls, T: HomogeneousTransform) -> Pose:
        return cls.from_matrix(T.R, T.t)

    @property
    def rotation(self) -> np.ndarray:
        # poses are immutable, so the matrix is computed once
        R = self.__dict__.get("_rotation")
        if R is None:
            R = axis_angle_to_matrix(self.q)
            R.setflags(write=False)
            object.__setattr__(self, "_rotation", R)
        return R

    def to_transform(self) -> HomogeneousTransform:
        return HomogeneousTransform(self.rotation, self.b)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.b, other.b) and np.array_equal(self.q, other.q)

    __hash__ = None

    def __repr__(self):
        return f"Pose(b={self.b.tolist()}, q={self.q.tolist()})"


def relative_ee_in_needle(p_cn: Pose, p_ce: Pose) -> Pose:
    """Pose of the end-effector in the needle frame, H(p_cn)^-1 H(p_ce)."""
    return Pose.from_transform(p_cn.to_transform().inverse() @ p_ce.to_transform())


def rotation_error(q_a: np.ndarray, q_b: np.ndarray) -> float:
    """Geodesic angle between two axis-angle rotations."""
    Ra = axis_angle_to_matrix(q_a)
    Rb = axis_angle_to_matrix(q_b)
    return float(rotation_angle(Ra @ np.swapaxes(Rb, -1, -2)))


def position_error(b_a: np.ndarray, b_b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(b_a, dtype=float) - np.asarray(b_b, dtype=float)))
