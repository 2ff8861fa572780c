import numpy as np
import pytest
from conftest import random_rigid
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from rigidreg3d import transform as tf
from rigidreg3d.errors import DegenerateConfiguration, FormatError

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)
rotvec = st.tuples(*[st.floats(-3.0, 3.0)] * 3)


def test_rodrigues_matches_scipy(rng):
    for _ in range(50):
        w = rng.normal(size=3) * rng.uniform(0, 3)
        np.testing.assert_allclose(tf.rodrigues(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-13)


def test_rodrigues_tiny_angle_is_orthonormal():
    R = tf.rodrigues([1e-14, -2e-14, 3e-14])
    assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-15


def test_axis_angle_and_rotation_z():
    np.testing.assert_allclose(tf.apply_point(tf.rotation_z(90), [1, 0, 0]), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(tf.apply_point(tf.axis_angle([1, 0, 0], 90), [0, 1, 0]), [0, 0, 1], atol=1e-15)


def test_about_center_keeps_pivot_fixed():
    c = np.array([10.0, -3.0, 7.0])
    T = tf.about_center(tf.axis_angle([1, 2, 3], 33), c)
    np.testing.assert_allclose(tf.apply_point(T, c), c, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(rotvec, vec3)
def test_invert_roundtrip(w, t):
    T = np.eye(4)
    T[:3, :3] = tf.rodrigues(w)
    T[:3, 3] = t
    np.testing.assert_allclose(tf.compose(tf.invert(T), T), np.eye(4), atol=1e-9)
    np.testing.assert_allclose(tf.invert(tf.invert(T)), T, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(rotvec, rotvec, vec3, vec3)
def test_compose_is_rigid_and_matches_sequential(w1, w2, t1, t2):
    a = tf.translation(t1) @ np.pad(tf.rodrigues(w1), ((0, 1), (0, 1)))
    a[3, 3] = 1.0
    b = tf.translation(t2) @ np.pad(tf.rodrigues(w2), ((0, 1), (0, 1)))
    b[3, 3] = 1.0
    c = tf.compose(a, b)
    assert tf.is_rigid(c)
    p = np.array([1.5, -2.0, 0.25])
    np.testing.assert_allclose(tf.apply_point(c, p), tf.apply_point(a, tf.apply_point(b, p)), atol=1e-9)


def test_compose_reorthonormalises_drift():
    a = tf.rotation_z(10)
    a[:3, :3] *= 1 + 1e-6
    c = tf.compose(a, np.eye(4))
    assert tf.orthogonality_error(c) < 1e-12


def test_is_rigid_rejects_reflection_and_scale():
    assert tf.is_rigid(tf.rotation_z(45))
    assert not tf.is_rigid(np.diag([1.0, 1.0, -1.0, 1.0]))
    assert not tf.is_rigid(np.diag([2.0, 1.0, 1.0, 1.0]))
    bad = np.eye(4)
    bad[3, 0] = 1.0
    assert not tf.is_rigid(bad)


@pytest.mark.parametrize("n", [3, 4, 10, 100, 1000])
def test_umeyama_exact(rng, n):
    src = rng.normal(size=(n, 3)) * 20
    T = random_rigid(rng)
    dst = tf.apply_points(T, src)
    est = tf.umeyama_fit(src, dst)
    assert np.abs(tf.apply_points(est, src) - dst).max() < 1e-9
    assert tf.is_rigid(est)


def test_umeyama_least_squares_matches_scipy_align(rng):
    src = rng.normal(size=(50, 3))
    T = random_rigid(rng)
    dst = tf.apply_points(T, src) + rng.normal(scale=0.05, size=src.shape)
    est = tf.umeyama_fit(src, dst)
    rot, _ = Rotation.align_vectors(dst - dst.mean(0), src - src.mean(0))
    np.testing.assert_allclose(est[:3, :3], rot.as_matrix(), atol=1e-9)


def test_umeyama_planar_reflection_case(rng):
    # coplanar points: the determinant correction must still yield a proper rotation
    src = np.column_stack([rng.normal(size=(20, 2)), np.zeros(20)])
    T = random_rigid(rng)
    est = tf.umeyama_fit(src, tf.apply_points(T, src))
    assert np.linalg.det(est[:3, :3]) > 0
    np.testing.assert_allclose(est, T, atol=1e-9)


def test_umeyama_degenerate():
    with pytest.raises(DegenerateConfiguration):
        tf.umeyama_fit(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        tf.umeyama_fit(line, line)


def test_rotation_error_hand_cases():
    assert tf.rotation_error(np.eye(4), np.eye(4)) == 0.0
    assert abs(tf.rotation_error(tf.rotation_z(30), np.eye(4)) - 30.0) < 1e-9
    assert abs(tf.rotation_error(tf.rotation_z(170), tf.rotation_z(-170)) - 20.0) < 1e-9
    assert abs(tf.rotation_error(tf.axis_angle([1, 0, 0], 180), np.eye(4)) - 180.0) < 1e-9
    # translation does not enter the rotation error
    assert tf.rotation_error(tf.translation(5, 5, 5), np.eye(4)) == 0.0


def test_translation_error_hand_cases():
    assert tf.translation_error(tf.translation(3, 4, 0), np.eye(4)) == 5.0
    assert abs(tf.translation_error(tf.translation(3, 4, 0), np.eye(4), 1.42) - 7.1) < 1e-12
    assert abs(tf.translation_error(tf.translation(1, 1, 1), np.eye(4), (1.0, 2.0, 2.0)) - 3.0) < 1e-12


def test_rotation_angle():
    assert abs(tf.rotation_angle(tf.axis_angle([1, 1, 0], 77)) - 77.0) < 1e-9


def test_transform_text_roundtrip(tmp_path, rng):
    for _ in range(20):
        T = random_rigid(rng)
        p = tmp_path / "t.mat"
        tf.save_transform(T, p)
        assert np.array_equal(tf.load_transform(p), T)
        assert len(p.read_text().strip().splitlines()) == 4


def test_load_transform_errors(tmp_path):
    p = tmp_path / "bad.mat"
    p.write_text("1 0 0\n0 1 0\n0 0 1\n")
    with pytest.raises(FormatError):
        tf.load_transform(p)
    p.write_text("1 0 0 x\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    with pytest.raises(FormatError):
        tf.load_transform(p)
    p.write_text("1 0 0 0\n0 1 0\n0 0 1 0\n0 0 0 1\n")
    with pytest.raises(FormatError):
        tf.load_transform(p)
    with pytest.raises(FileNotFoundError):
        tf.load_transform(tmp_path / "missing.mat")
