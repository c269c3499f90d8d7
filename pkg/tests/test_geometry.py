"""Rigid-transform core: construction guards, composition algebra,
orthonormalization, quaternion round trips, and the pose text form."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navkit.errors import DegenerateConfigurationError
from navkit.geometry import (
    Point3,
    RigidTransform,
    UnitQuaternion,
    compose,
    format_float,
    format_pose,
    invert,
    orthonormalize,
    parse_pose,
    quaternion_from_rotation,
    rotation_about_axis,
    rotation_angle_between,
    rotation_from_quaternion,
    rotation_from_rotvec,
    transform_point,
    transform_points,
)


def rotation_gap_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two rotations, numerically stable near zero:
    ||Ra - Rb||_F = 2*sqrt(2)*sin(theta/2)."""
    s = np.linalg.norm(a - b) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(2.0 * np.arcsin(min(1.0, s))))


finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)
angles = st.floats(min_value=-179.0, max_value=179.0, allow_nan=False)
axes = st.tuples(
    st.floats(min_value=-1, max_value=1),
    st.floats(min_value=-1, max_value=1),
    st.floats(min_value=-1, max_value=1),
).filter(lambda a: np.linalg.norm(a) > 1e-3)


@st.composite
def rigid_transforms(draw):
    axis = draw(axes)
    angle = draw(angles)
    t = draw(st.tuples(finite, finite, finite))
    return RigidTransform(rotation_about_axis(axis, angle), t)


RZ90 = rotation_about_axis((0, 0, 1), 90.0)


# ---------------------------------------------------------------------------
# construction guards


def test_identity_is_default():
    t = RigidTransform()
    assert np.array_equal(t.rotation, np.eye(3))
    assert np.array_equal(t.translation, np.zeros(3))


def test_rejects_non_rotation_matrix():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0, (0, 0, 0))


def test_rejects_reflection():
    m = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        RigidTransform(m, (0, 0, 0))


def test_rejects_nonfinite_translation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), (np.nan, 0, 0))


def test_small_drift_reorthonormalized():
    rng = np.random.default_rng(4)
    r = rotation_about_axis((1, 2, 3), 40.0)
    drifted = r + rng.normal(0, 1e-8, (3, 3))
    t = RigidTransform(drifted, (0, 0, 0))
    gram = t.rotation.T @ t.rotation
    assert np.linalg.norm(gram - np.eye(3)) < 1e-12
    assert rotation_gap_deg(t.rotation, r) < 1e-5


def test_large_drift_rejected():
    r = rotation_about_axis((1, 0, 0), 30.0)
    with pytest.raises(ValueError):
        RigidTransform(r + 1e-3, (0, 0, 0))


def test_transform_arrays_read_only():
    t = RigidTransform(RZ90, (1, 2, 3))
    with pytest.raises(ValueError):
        t.rotation[0, 0] = 5.0
    with pytest.raises(ValueError):
        t.translation[0] = 5.0


def test_point3_rejects_nonfinite():
    with pytest.raises(ValueError):
        Point3(np.inf, 0, 0)


# ---------------------------------------------------------------------------
# compose / invert / transform_point examples


def test_compose_identity_left():
    t = RigidTransform(RZ90, (1, 2, 3))
    out = compose(RigidTransform.identity(), t)
    assert np.allclose(out.rotation, t.rotation)
    assert np.allclose(out.translation, t.translation)


def test_compose_with_inverse_is_identity():
    t = RigidTransform(rotation_about_axis((1, 1, 0), 70.0), (5, -3, 2))
    out = compose(t, invert(t))
    assert np.linalg.norm(out.rotation - np.eye(3)) < 1e-12
    assert np.linalg.norm(out.translation) < 1e-12


def test_compose_two_quarter_turns():
    a = RigidTransform(RZ90, (1, 0, 0))
    b = RigidTransform(RZ90, (0, 0, 0))
    out = compose(a, b)
    assert np.allclose(out.rotation, rotation_about_axis((0, 0, 1), 180.0), atol=1e-12)
    assert np.allclose(out.translation, (1, 0, 0), atol=1e-12)


def test_invert_identity():
    out = invert(RigidTransform.identity())
    assert np.array_equal(out.rotation, np.eye(3))
    assert np.linalg.norm(out.translation) == 0


def test_invert_pure_translation():
    out = invert(RigidTransform(np.eye(3), (3, 0, 0)))
    assert np.allclose(out.translation, (-3, 0, 0))


def test_invert_quarter_turn():
    out = invert(RigidTransform(RZ90, (1, 0, 0)))
    assert np.allclose(out.rotation, rotation_about_axis((0, 0, 1), -90.0), atol=1e-12)
    assert np.allclose(out.translation, (0, 1, 0), atol=1e-12)


def test_transform_point_identity():
    assert transform_point(RigidTransform.identity(), Point3(1, 2, 3)) == Point3(1, 2, 3)


def test_transform_point_translation():
    out = transform_point(RigidTransform(np.eye(3), (10, 0, 0)), Point3(1, 2, 3))
    assert out == Point3(11, 2, 3)


def test_transform_point_rotation():
    out = transform_point(RigidTransform(RZ90, (0, 0, 0)), Point3(1, 0, 0))
    assert abs(out.x) < 1e-12 and abs(out.y - 1) < 1e-12 and abs(out.z) < 1e-12


def test_transform_points_matches_loop():
    t = RigidTransform(rotation_about_axis((3, 1, 2), 50.0), (4, 5, 6))
    pts = np.array([[1, 2, 3], [-4, 0, 2], [0.5, -1, 9]])
    out = transform_points(t, pts)
    for row, p in zip(out, pts):
        single = transform_point(t, Point3(*p))
        assert np.allclose(row, [single.x, single.y, single.z], atol=1e-12)


# ---------------------------------------------------------------------------
# rotation angle


def test_rotation_angle_same_is_zero():
    t = RigidTransform(rotation_about_axis((1, 2, 3), 33.0), (0, 0, 0))
    assert rotation_angle_between(t, t) == 0.0


def test_rotation_angle_quarter_turn():
    assert abs(rotation_angle_between(
        RigidTransform.identity(), RigidTransform(RZ90, (0, 0, 0))
    ) - 90.0) < 1e-9


def test_rotation_angle_30_vs_75():
    a = RigidTransform(rotation_about_axis((0, 0, 1), 30.0), (0, 0, 0))
    b = RigidTransform(rotation_about_axis((0, 0, 1), 75.0), (0, 0, 0))
    assert abs(rotation_angle_between(a, b) - 45.0) < 1e-9


@given(rigid_transforms(), rigid_transforms())
@settings(max_examples=60, deadline=None)
def test_rotation_angle_symmetric(a, b):
    assert abs(rotation_angle_between(a, b) - rotation_angle_between(b, a)) < 1e-9


@given(rigid_transforms(), rigid_transforms(), rigid_transforms())
@settings(max_examples=60, deadline=None)
def test_rotation_angle_triangle_inequality(a, b, c):
    ab = rotation_angle_between(a, b)
    bc = rotation_angle_between(b, c)
    ac = rotation_angle_between(a, c)
    assert ac <= ab + bc + 1e-6


# ---------------------------------------------------------------------------
# algebraic properties


@given(rigid_transforms(), rigid_transforms(), rigid_transforms())
@settings(max_examples=80, deadline=None)
def test_compose_associative(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert np.linalg.norm(left.rotation - right.rotation) < 1e-9
    assert np.linalg.norm(left.translation - right.translation) < 1e-6


@given(rigid_transforms())
@settings(max_examples=80, deadline=None)
def test_invert_involution(t):
    back = invert(invert(t))
    assert np.linalg.norm(back.rotation - t.rotation) < 1e-9
    assert np.linalg.norm(back.translation - t.translation) < 1e-9


@given(rigid_transforms(), rigid_transforms(), st.tuples(finite, finite, finite))
@settings(max_examples=80, deadline=None)
def test_transform_point_composition_chain(a, b, p):
    point = Point3(*p)
    direct = transform_point(compose(a, b), point)
    chained = transform_point(a, transform_point(b, point))
    assert np.allclose(
        [direct.x, direct.y, direct.z], [chained.x, chained.y, chained.z], atol=1e-6
    )


@given(rigid_transforms())
@settings(max_examples=80, deadline=None)
def test_quaternion_round_trip(t):
    q = quaternion_from_rotation(t.rotation)
    back = rotation_from_quaternion(q)
    assert np.linalg.norm(back - t.rotation) < 1e-9


def test_quaternion_branches_near_180():
    for axis in ((1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)):
        r = rotation_about_axis(axis, 179.5)
        q = quaternion_from_rotation(r)
        assert np.linalg.norm(rotation_from_quaternion(q) - r) < 1e-9


def test_unit_quaternion_normalizes_small_drift():
    q = UnitQuaternion(1.0 + 1e-8, 0.0, 0.0, 0.0)
    assert abs(q.w - 1.0) < 1e-7
    with pytest.raises(ValueError):
        UnitQuaternion(1.5, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# orthonormalize


def test_orthonormalize_fixed_point():
    r = rotation_about_axis((2, -1, 4), 67.0)
    assert np.linalg.norm(orthonormalize(r) - r) < 1e-12


def test_orthonormalize_removes_scale():
    out = orthonormalize(2.0 * RZ90)
    assert np.linalg.norm(out - RZ90) < 1e-12


def test_orthonormalize_small_perturbation():
    rng = np.random.default_rng(11)
    r = rotation_about_axis((1, 3, -2), 25.0)
    out = orthonormalize(r + rng.normal(0, 1e-3, (3, 3)))
    assert abs(np.linalg.det(out) - 1.0) < 1e-12
    assert rotation_gap_deg(out, r) < 0.2


def test_orthonormalize_rank_deficient():
    m = np.zeros((3, 3))
    m[0, 0] = 1.0
    m[1, 1] = 1.0
    with pytest.raises(DegenerateConfigurationError):
        orthonormalize(m)


@given(rigid_transforms())
@settings(max_examples=50, deadline=None)
def test_orthonormalize_projects_to_rotation(t):
    rng = np.random.default_rng(0)
    out = orthonormalize(t.rotation + rng.normal(0, 1e-4, (3, 3)))
    assert np.linalg.norm(out.T @ out - np.eye(3)) < 1e-12
    assert abs(np.linalg.det(out) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# rotation constructors


def test_rotation_about_axis_normalizes():
    a = rotation_about_axis((0, 0, 10), 90.0)
    assert np.linalg.norm(a - RZ90) < 1e-12


def test_rotation_from_rotvec_zero_is_identity():
    assert np.array_equal(rotation_from_rotvec(np.zeros(3)), np.eye(3))


def test_rotation_from_rotvec_matches_axis_angle():
    axis = np.array([1.0, 2.0, -1.0])
    axis /= np.linalg.norm(axis)
    out = rotation_from_rotvec(axis * np.radians(34.0))
    assert np.linalg.norm(out - rotation_about_axis(axis, 34.0)) < 1e-12


# ---------------------------------------------------------------------------
# pose text form


def test_identity_pose_text():
    assert format_pose(RigidTransform.identity()) == "0 0 0 0 0 0 1"


def test_parse_pose_rejects_wrong_arity():
    with pytest.raises(ValueError):
        parse_pose("1 2 3".split())


@given(rigid_transforms())
@settings(max_examples=100, deadline=None)
def test_pose_text_round_trip_exact(t):
    text = format_pose(t)
    back = parse_pose(text.split())
    assert format_pose(back) == text
    assert np.allclose(back.translation, t.translation, atol=0)
    assert np.linalg.norm(back.rotation - t.rotation) < 1e-9


def test_format_float_strips_integer_suffix():
    assert format_float(1.0) == "1"
    assert format_float(-3.0) == "-3"
    assert format_float(0.5) == "0.5"
    assert format_float(1e-05) == "1e-05"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips(x):
    assert float(format_float(x)) == x
