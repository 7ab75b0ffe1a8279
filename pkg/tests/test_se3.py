import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from needletrack.se3 import (
    HomogeneousTransform,
    Pose,
    axis_angle_to_matrix,
    canonicalize_axis_angle,
    chordal_mean_rotation,
    compose,
    matrix_to_axis_angle,
    matrix_to_quaternion,
    position_error,
    quaternion_to_matrix,
    relative_ee_in_needle,
    rotation_error,
)
from conftest import random_rotvecs

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)


def random_transform(rng):
    return HomogeneousTransform(axis_angle_to_matrix(random_rotvecs(rng, 1)[0]), rng.normal(0, 50, 3))


def test_zero_rotation_is_identity():
    assert np.array_equal(axis_angle_to_matrix(np.zeros(3)), np.eye(3))


def test_half_turn_about_z():
    np.testing.assert_allclose(axis_angle_to_matrix([0, 0, np.pi]), np.diag([-1.0, -1.0, 1.0]), atol=1e-15)


def test_rodrigues_matches_quaternion_construction(rng):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    # quaternion built by hand, independent of the library
    x, y, z = axis * np.sin(0.35)
    w = np.cos(0.35)
    Q = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    np.testing.assert_allclose(axis_angle_to_matrix(0.7 * axis), Q, atol=1e-12)


def test_batch_matches_scipy(rng):
    q = random_rotvecs(rng, 1000)
    np.testing.assert_allclose(axis_angle_to_matrix(q), Rotation.from_rotvec(q).as_matrix(), atol=1e-12)


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        axis_angle_to_matrix([np.nan, 0, 0])
    with pytest.raises(ValueError):
        Pose([0, 0, np.inf], [0, 0, 0])


def test_identity_to_axis_angle():
    assert np.array_equal(matrix_to_axis_angle(np.eye(3)), np.zeros(3))


def test_half_turn_tie_break_nonnegative_z():
    q = matrix_to_axis_angle(np.diag([-1.0, -1.0, 1.0]))
    np.testing.assert_allclose(q, [0, 0, np.pi], atol=1e-15)
    q = matrix_to_axis_angle(axis_angle_to_matrix([0, 0, -np.pi]))
    assert q[2] > 0


def test_non_orthonormal_rejected():
    with pytest.raises(ValueError):
        matrix_to_axis_angle(np.eye(3) * 1.01)
    with pytest.raises(ValueError):
        matrix_to_axis_angle(np.diag([1.0, 1.0, -1.0]))


def test_round_trip_10k_including_edges(rng):
    q = random_rotvecs(rng, 10_000)
    # near-identity and near-half-turn rotations
    q[:500] *= 1e-9 / np.linalg.norm(q[:500], axis=1, keepdims=True)
    q[500:1000] *= (np.pi - rng.uniform(0, 1e-7, (500, 1))) / np.linalg.norm(q[500:1000], axis=1, keepdims=True)
    R = axis_angle_to_matrix(q)
    back = axis_angle_to_matrix(matrix_to_axis_angle(R))
    assert np.abs(back - R).max() < 1e-9


@given(vec3)
def test_canonical_angle_range(q):
    c = canonicalize_axis_angle(q)
    assert np.linalg.norm(c) <= np.pi + 1e-12
    np.testing.assert_allclose(axis_angle_to_matrix(c), axis_angle_to_matrix(q), atol=1e-9)


@given(vec3)
def test_canonicalize_idempotent(q):
    c = canonicalize_axis_angle(q)
    assert np.array_equal(canonicalize_axis_angle(c), c)


def test_compose_identity_and_inverse(rng):
    B = random_transform(rng)
    I = HomogeneousTransform.identity()
    assert compose(I, B).as_matrix().tolist() == B.as_matrix().tolist()
    np.testing.assert_allclose((B @ B.inverse()).as_matrix(), np.eye(4), atol=1e-10)


def test_compose_matches_dense_product(rng):
    for _ in range(100):
        A, B = random_transform(rng), random_transform(rng)
        np.testing.assert_allclose(compose(A, B).as_matrix(), A.as_matrix() @ B.as_matrix(), atol=1e-12, rtol=0)


def test_compose_associative(rng):
    for _ in range(100):
        A, B, C = (random_transform(rng) for _ in range(3))
        assert np.abs(((A @ B) @ C).as_matrix() - (A @ (B @ C)).as_matrix()).max() < 1e-10


def test_transform_rejects_bad_rotation():
    with pytest.raises(ValueError):
        HomogeneousTransform(np.eye(3) * 2, np.zeros(3))


def test_relative_ee_in_needle_cases(rng):
    p = Pose(rng.normal(size=3), random_rotvecs(rng, 1)[0])
    rel = relative_ee_in_needle(p, p)
    np.testing.assert_allclose(rel.b, 0, atol=1e-12)
    np.testing.assert_allclose(rel.q, 0, atol=1e-12)
    rel = relative_ee_in_needle(Pose.identity(), p)
    np.testing.assert_allclose(rel.b, p.b, atol=1e-12)
    assert rotation_error(rel.q, p.q) < 1e-12


def test_relative_ee_recomposition(rng):
    for _ in range(200):
        p_cn = Pose(rng.normal(0, 50, 3), random_rotvecs(rng, 1)[0])
        p_ce = Pose(rng.normal(0, 50, 3), random_rotvecs(rng, 1)[0])
        rel = relative_ee_in_needle(p_cn, p_ce)
        M = (p_cn.to_transform() @ rel.to_transform()).as_matrix()
        np.testing.assert_allclose(M, p_ce.to_transform().as_matrix(), atol=1e-9)


def test_rotation_error_cases():
    assert rotation_error([0, 0, 0.3], [0, 0, 0.3]) == 0.0
    assert rotation_error([0, 0, np.pi], [0, 0, 0]) == pytest.approx(np.pi, abs=1e-12)


def test_rotation_error_matches_quaternion_oracle(rng):
    qa, qb = random_rotvecs(rng, 500), random_rotvecs(rng, 500)
    xa, xb = Rotation.from_rotvec(qa).as_quat(), Rotation.from_rotvec(qb).as_quat()
    oracle = 2 * np.arccos(np.clip(np.abs(np.sum(xa * xb, axis=1)), 0, 1))
    ours = np.array([rotation_error(a, b) for a, b in zip(qa, qb)])
    np.testing.assert_allclose(ours, oracle, atol=1e-7)  # arccos near 1 limits the oracle, not us
    sym = np.array([rotation_error(b, a) for a, b in zip(qa, qb)])
    np.testing.assert_allclose(ours, sym, atol=1e-12)


@given(vec3, vec3)
def test_rotation_error_metric(a, b):
    e = rotation_error(a, b)
    assert 0.0 <= e <= np.pi + 1e-12
    assert abs(e - rotation_error(b, a)) < 1e-9
    assert rotation_error(a, a) < 1e-9


def test_position_error():
    assert position_error([1, 2, 3], [1, 2, 3]) == 0.0
    assert position_error([1, 0, 0], [0, 0, 0]) == 1.0


@given(vec3, vec3)
def test_position_error_oracle(a, b):
    assert position_error(a, b) == pytest.approx(np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))), rel=1e-12, abs=1e-12)


def test_quaternion_round_trip(rng):
    R = axis_angle_to_matrix(random_rotvecs(rng, 1000))
    np.testing.assert_allclose(quaternion_to_matrix(matrix_to_quaternion(R)), R, atol=1e-12)


def test_chordal_mean_of_single_and_symmetric_pair(rng):
    R = axis_angle_to_matrix(random_rotvecs(rng, 1))
    np.testing.assert_allclose(chordal_mean_rotation(R, [1.0]), R[0], atol=1e-12)
    pair = axis_angle_to_matrix(np.array([[0, 0, 0.4], [0, 0, -0.4]]))
    np.testing.assert_allclose(chordal_mean_rotation(pair, [0.5, 0.5]), np.eye(3), atol=1e-12)


def test_pose_is_immutable_and_canonical():
    p = Pose([1, 2, 3], [0, 0, 3 * np.pi / 2])
    np.testing.assert_allclose(p.q, [0, 0, -np.pi / 2], atol=1e-12)
    with pytest.raises(ValueError):
        p.b[0] = 5.0
    np.testing.assert_allclose(Pose.from_matrix(p.rotation, p.b).q, p.q, atol=1e-12)
    assert Pose(p.b, p.q) == p
