"""Property-based invariants over the numeric building blocks."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from binpick.evaluation import ConfusionMatrix, metrics
from binpick.nn import cross_entropy, softmax
from binpick.rotation import (mat_to_quat, quat_mul, quat_normalize,
                              quat_to_mat, random_quat, rotate_points)
from binpick.trials import _mirror_image, _rot90_image, _transform_pose

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
quat_raw = st.tuples(*[st.floats(-1, 1) for _ in range(4)]).filter(
    lambda q: sum(v * v for v in q) > 1e-4)


@settings(max_examples=60, deadline=None)
@given(quat_raw)
def test_quat_to_mat_is_orthonormal(q):
    m = quat_to_mat(quat_normalize(np.array(q)))
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.isclose(np.linalg.det(m), 1.0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(quat_raw)
def test_mat_quat_roundtrip(q):
    qn = quat_normalize(np.array(q))
    q2 = mat_to_quat(quat_to_mat(qn))
    # q and -q encode the same rotation
    assert np.allclose(q2, qn, atol=1e-7) or np.allclose(q2, -qn, atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(quat_raw, quat_raw)
def test_quat_mul_composes_rotations(qa, qb):
    a = quat_normalize(np.array(qa))
    b = quat_normalize(np.array(qb))
    lhs = quat_to_mat(quat_mul(a, b))
    rhs = quat_to_mat(a) @ quat_to_mat(b)
    assert np.allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(quat_raw, st.tuples(finite, finite, finite))
def test_rotation_preserves_norm(q, p):
    qn = quat_normalize(np.array(q))
    pts = np.array([p])
    got = rotate_points(qn, pts)
    assert np.allclose(np.linalg.norm(got), np.linalg.norm(pts), rtol=1e-9,
                       atol=1e-9)


cells = st.tuples(st.integers(0, 10_000), st.integers(0, 10_000),
                  st.integers(0, 10_000), st.integers(0, 10_000)).filter(
    lambda c: c[0] > 0)


@settings(max_examples=100, deadline=None)
@given(cells)
def test_metrics_bounds_and_ordering(c):
    p, r, f = metrics(ConfusionMatrix(*c))
    assert 0.0 < p <= 1.0
    assert 0.0 < r <= 1.0
    # F is the harmonic mean: between min and max of (P, R)
    assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


images = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).random((6, 6)))


@settings(max_examples=30, deadline=None)
@given(images)
def test_rot90_four_times_is_identity(a):
    b = a
    for _ in range(4):
        b = _rot90_image(b)
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(images)
def test_mirror_is_involution(a):
    assert np.array_equal(_mirror_image(_mirror_image(a)), a)


poses = st.tuples(st.floats(-0.08, 0.08), st.floats(-0.08, 0.08),
                  st.floats(0.0, 3.14)).map(
    lambda t: {"x": t[0], "y": t[1], "theta": t[2], "opening": 0.07})


@settings(max_examples=60, deadline=None)
@given(poses, st.integers(0, 3))
def test_pose_rot90_preserves_radius(pose, k):
    got = _transform_pose(pose, k, False)
    assert np.isclose(np.hypot(got["x"], got["y"]),
                      np.hypot(pose["x"], pose["y"]), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(poses)
def test_pose_mirror_is_involution(pose):
    got = _transform_pose(_transform_pose(pose, 0, True), 0, True)
    assert np.isclose(got["x"], pose["x"], atol=1e-12)
    assert np.isclose(got["y"], pose["y"], atol=1e-12)
    assert np.isclose(np.cos(2 * got["theta"]), np.cos(2 * pose["theta"]),
                      atol=1e-9)


logit_rows = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).normal(scale=5.0, size=(4, 2)))


@settings(max_examples=40, deadline=None)
@given(logit_rows, st.floats(-50, 50))
def test_softmax_rows_sum_to_one_and_shift_invariant(a, c):
    p = softmax(a)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert (p >= 0).all()
    assert np.allclose(softmax(a + c), p, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(logit_rows)
def test_cross_entropy_non_negative(a):
    labels = np.array([0, 1, 0, 1])
    assert cross_entropy(softmax(a), labels) >= 0.0
