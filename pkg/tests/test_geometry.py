import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doorkin.geometry import (DegenerateNormal, Pose, compose, handle_transform, is_rotation,
                              matrix_to_rpy, pose_distance, rotation_about, rpy_to_matrix)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


@st.composite
def poses(draw):
    q = np.array(draw(st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4)))
    if np.linalg.norm(q) < 1e-3:
        q = np.array([0.0, 0.0, 0.0, 1.0])
    return Pose.from_quaternion(draw(vec3), q / np.linalg.norm(q))


@st.composite
def horizontal_normals(draw):
    az = draw(st.floats(0, 2 * math.pi))
    el = draw(st.floats(-1.4, 1.4))
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def test_handle_transform_x_normal():
    p = handle_transform([1, 0, 0], [0, 0, 0])
    np.testing.assert_allclose(p.rotation, [[1, 0, 0], [0, -1, 0], [0, 0, -1]], atol=0)
    np.testing.assert_array_equal(p.translation, [0, 0, 0])


def test_handle_transform_y_normal():
    p = handle_transform([0, 1, 0], [1, 2, 3])
    np.testing.assert_array_equal(p.translation, [1, 2, 3])
    np.testing.assert_array_equal(p.rotation[:, 0], [0, 1, 0])


def test_handle_transform_second_column_normalized():
    # (a_y, -a_x, 0) = (0.8, -0.6, 0) has unit norm after dividing by its length
    p = handle_transform([0.6, 0.8, 0], [0, 0, 0])
    raw = np.array([0.8, -0.6, 0.0])
    np.testing.assert_allclose(p.rotation[:, 1], raw / np.sqrt(raw @ raw), atol=1e-15)


def test_handle_transform_vertical_normal_rejected():
    with pytest.raises(DegenerateNormal):
        handle_transform([0, 0, 1], [0, 0, 0])
    with pytest.raises(DegenerateNormal):
        handle_transform([1e-6, 0, -1], [0, 0, 0])


def test_handle_transform_requires_unit_normal():
    with pytest.raises(ValueError):
        handle_transform([2, 0, 0], [0, 0, 0])


@given(horizontal_normals(), vec3)
def test_handle_transform_is_proper_rotation(a, o):
    p = handle_transform(a, o)
    assert is_rotation(p.rotation, 1e-9)
    np.testing.assert_array_equal(p.rotation[:, 0], a)
    assert abs(p.rotation[2, 1]) == 0.0  # second axis horizontal


def test_compose_identity_and_inverse(rng):
    p = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    assert compose(Pose.identity(), p).allclose(p)
    assert compose(p, p.inverse()).allclose(Pose.identity())


def test_compose_offset_moves_along_negative_normal():
    a = np.array([0.6, 0.8, 0.0])
    h = handle_transform(a, [1.0, 2.0, 3.0])
    offset = Pose.from_translation([-0.05, 0, 0])
    # hand-multiplied homogeneous matrices
    expected = h.matrix() @ np.array([[1, 0, 0, -0.05], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])
    g = compose(h, offset)
    np.testing.assert_allclose(g.matrix(), expected, atol=1e-15)
    np.testing.assert_allclose(g.translation, h.translation - 0.05 * a, atol=1e-15)


def test_pose_distance_examples():
    p = Pose.from_rotvec([0.1, 0.2, 0.3], [1, 2, 3])
    assert pose_distance(p, p) == (0.0, 0.0)
    d, ang = pose_distance(Pose.identity(), Pose(rotation_about([0, 0, 1], math.pi / 2), [0, 0, 0]))
    assert d == 0.0 and ang == pytest.approx(math.pi / 2, abs=1e-12)
    assert pose_distance(Pose.identity(), Pose.from_translation([3, 4, 0])) == (5.0, 0.0)


@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-9)


@given(poses(), poses(), poses())
def test_pose_distance_metric_properties(a, b, c):
    dab, rab = pose_distance(a, b)
    dba, rba = pose_distance(b, a)
    assert dab == pytest.approx(dba, abs=1e-9) and rab == pytest.approx(rba, abs=1e-9)
    dbc, rbc = pose_distance(b, c)
    dac, rac = pose_distance(a, c)
    assert dac <= dab + dbc + 1e-9
    assert rac <= rab + rbc + 1e-9


@given(poses())
def test_pose_line_round_trip(p):
    q = Pose.from_line(p.to_line())
    assert q.to_line() == p.to_line()
    assert q.allclose(p, atol=1e-12)
    assert p.quaternion()[3] >= 0


def test_pose_line_rejects_wrong_count():
    with pytest.raises(ValueError):
        Pose.from_line("1 2 3")


def test_pose_is_immutable():
    p = Pose.identity()
    with pytest.raises(ValueError):
        p.translation[0] = 1.0


@given(st.floats(-3, 3), st.floats(-1.5, 1.5), st.floats(-3, 3))
def test_rpy_round_trip(r, p, y):
    rot = rpy_to_matrix(r, p, y)
    assert is_rotation(rot, 1e-12)
    np.testing.assert_allclose(rpy_to_matrix(*matrix_to_rpy(rot)), rot, atol=1e-9)


def test_rpy_convention_is_z_y_x():
    rot = rpy_to_matrix(0.3, 0.0, 0.0)
    np.testing.assert_allclose(rot, rotation_about([1, 0, 0], 0.3), atol=1e-15)
    rot = rpy_to_matrix(0.0, 0.0, 0.4)
    np.testing.assert_allclose(rot, rotation_about([0, 0, 1], 0.4), atol=1e-15)
