"""Planar PnP, camera-to-world chaining, and the tracking state machine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navkit.errors import (
    DegenerateConfigurationError,
    InsufficientDataError,
    NoValidPoseError,
    OutOfOrderError,
    UnregisteredMarkerError,
)
from navkit.geometry import RigidTransform, compose, invert, rotation_about_axis
from navkit.tracking import (
    CameraIntrinsics,
    CameraSample,
    MarkerObservation,
    MarkerSpec,
    TrackedMarkerState,
    TrackingRegistry,
    marker_corners,
    marker_world_pose,
    project_points,
    solve_marker_pnp,
    solve_planar_pnp,
    step_tracking,
)

INTR = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=0.0, cy=0.0)


def rotation_gap_deg(a: np.ndarray, b: np.ndarray) -> float:
    s = np.linalg.norm(a - b) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(2.0 * np.arcsin(min(1.0, s))))


def correspondences(pixels: np.ndarray, plane: np.ndarray):
    return [(pixels[i], plane[i]) for i in range(len(pixels))]


def random_visible_pose(rng: np.random.Generator) -> RigidTransform:
    axis = rng.normal(size=3)
    angle = rng.uniform(-35.0, 35.0)
    t = np.array([rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(350, 900)])
    return RigidTransform(rotation_about_axis(axis, angle), t)


# ---------------------------------------------------------------------------
# types


def test_intrinsics_require_positive_focal():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0, fy=1000.0, cx=0.0, cy=0.0)


def test_intrinsics_principal_point_inside_image():
    CameraIntrinsics(fx=1000, fy=1000, cx=320, cy=240, image_width=640, image_height=480)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1000, fy=1000, cx=700, cy=240, image_width=640, image_height=480)


def test_marker_spec_validation():
    with pytest.raises(ValueError):
        MarkerSpec(id="m", family="square", edge_length=0.0, role="tool")
    with pytest.raises(ValueError):
        MarkerSpec(id="m", family="square", edge_length=50.0, role="wand")


def test_marker_corners_winding():
    c = marker_corners(80.0)
    assert c.shape == (4, 3)
    assert np.allclose(c[:, 2], 0.0)
    # counterclockwise from top-left in the x-right / y-up marker frame
    assert np.allclose(c[0], (-40, 40, 0))
    assert np.allclose(c[1], (-40, -40, 0))
    assert np.allclose(c[2], (40, -40, 0))
    assert np.allclose(c[3], (40, 40, 0))


def test_observation_needs_four_corners():
    with pytest.raises(ValueError):
        MarkerObservation(marker_id="m", corners_2d=np.zeros((3, 2)), timestamp=0.0)


def test_state_mode_pose_consistency():
    with pytest.raises(ValueError):
        TrackedMarkerState(marker_id="m", mode="never_seen",
                           world_pose=RigidTransform.identity(), last_seen=0.0)
    with pytest.raises(ValueError):
        TrackedMarkerState(marker_id="m", mode="tracked", world_pose=None, last_seen=0.0)


# ---------------------------------------------------------------------------
# planar PnP


def test_pnp_face_on_square_projects_to_80px():
    pose = RigidTransform(np.eye(3), (0.0, 0.0, 500.0))
    pixels = project_points(INTR, pose, marker_corners(80.0))
    assert np.allclose(np.abs(pixels), 80.0)
    plane = marker_corners(80.0)[:, :2]
    sol = solve_planar_pnp(correspondences(pixels, plane), INTR)
    assert np.linalg.norm(sol.pose.translation - (0, 0, 500)) < 1e-6
    assert rotation_gap_deg(sol.pose.rotation, np.eye(3)) < 1e-6
    assert sol.reprojection_rmse < 1e-6


def test_pnp_three_points_insufficient():
    plane = marker_corners(80.0)[:3, :2]
    pixels = plane * 2.0
    with pytest.raises(InsufficientDataError):
        solve_planar_pnp(correspondences(pixels, plane), INTR)


def test_pnp_collinear_layout_degenerate():
    plane = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]])
    pixels = plane * 3.0 + 5.0
    with pytest.raises(DegenerateConfigurationError):
        solve_planar_pnp(correspondences(pixels, plane), INTR)


def test_pnp_three_collinear_of_four_degenerate():
    plane = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [10.0, 15.0]])
    pixels = plane * 3.0 + 5.0
    with pytest.raises(DegenerateConfigurationError):
        solve_planar_pnp(correspondences(pixels, plane), INTR)


def test_pnp_plane_through_camera_center_has_no_pose():
    plane = marker_corners(80.0)[:, :2]
    r = np.radians(30.0)
    r1 = np.array([np.cos(r), 0.0, -np.sin(r)])
    r2 = np.array([0.0, 1.0, 0.0])
    t = np.array([10.0, 5.0, 0.0])
    pixels = []
    for x, y in plane:
        v = x * r1 + y * r2 + t
        pixels.append([1000.0 * v[0] / v[2], 1000.0 * v[1] / v[2]])
    with pytest.raises(NoValidPoseError):
        solve_planar_pnp(correspondences(np.array(pixels), plane), INTR)


def test_pnp_random_poses_exact_corners():
    rng = np.random.default_rng(2718)
    plane = marker_corners(80.0)[:, :2]
    corners = marker_corners(80.0)
    for _ in range(100):
        pose = random_visible_pose(rng)
        pixels = project_points(INTR, pose, corners)
        sol = solve_planar_pnp(correspondences(pixels, plane), INTR)
        assert np.linalg.norm(sol.pose.translation - pose.translation) < 1e-6
        assert rotation_gap_deg(sol.pose.rotation, pose.rotation) < 1e-6


def test_pnp_error_grows_with_pixel_noise():
    rng = np.random.default_rng(99)
    corners = marker_corners(80.0)
    plane = corners[:, :2]
    means = []
    for sigma in (0.1, 0.5, 1.0):
        errs = []
        for _ in range(200):
            pose = random_visible_pose(rng)
            pixels = project_points(INTR, pose, corners) + rng.normal(0, sigma, (4, 2))
            sol = solve_planar_pnp(correspondences(pixels, plane), INTR)
            errs.append(np.linalg.norm(sol.pose.translation - pose.translation))
        means.append(np.mean(errs))
    assert means[0] < means[1] < means[2]


def test_solve_marker_pnp_uses_spec_geometry():
    rng = np.random.default_rng(5)
    spec = MarkerSpec(id="tool", family="square", edge_length=50.0, role="tool")
    pose = random_visible_pose(rng)
    pixels = project_points(INTR, pose, marker_corners(50.0))
    obs = MarkerObservation(marker_id="tool", corners_2d=pixels, timestamp=0.0)
    sol = solve_marker_pnp(obs, spec, INTR)
    assert np.linalg.norm(sol.pose.translation - pose.translation) < 1e-6


# ---------------------------------------------------------------------------
# world chaining


def test_marker_world_pose_identity_camera():
    obs_pose = RigidTransform(rotation_about_axis((1, 0, 0), 15.0), (1, 2, 3))
    cam = CameraSample(pose_world=RigidTransform.identity(), timestamp=0.0)
    out = marker_world_pose(obs_pose, cam)
    assert np.allclose(out.rotation, obs_pose.rotation)
    assert np.allclose(out.translation, obs_pose.translation)


def test_marker_world_pose_depth_chain():
    cam = CameraSample(pose_world=RigidTransform(np.eye(3), (0, 0, 1000.0)), timestamp=0.0)
    out = marker_world_pose(RigidTransform(np.eye(3), (0, 0, 500.0)), cam)
    assert np.allclose(out.translation, (0, 0, 1500.0))


def test_marker_world_pose_inverse_camera():
    obs_pose = RigidTransform(rotation_about_axis((0, 1, 0), 40.0), (5, 6, 7))
    cam = CameraSample(pose_world=invert(obs_pose), timestamp=0.0)
    out = marker_world_pose(obs_pose, cam)
    assert np.linalg.norm(out.rotation - np.eye(3)) < 1e-12
    assert np.linalg.norm(out.translation) < 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_marker_world_pose_is_compose(seed):
    rng = np.random.default_rng(seed)
    a = random_visible_pose(rng)
    b = random_visible_pose(rng)
    cam = CameraSample(pose_world=a, timestamp=0.0)
    out = marker_world_pose(b, cam)
    ref = compose(a, b)
    assert np.array_equal(out.rotation, ref.rotation)
    assert np.array_equal(out.translation, ref.translation)


# ---------------------------------------------------------------------------
# state machine


def make_registry():
    return TrackingRegistry.from_specs(
        [
            MarkerSpec(id="tool", family="square", edge_length=50.0, role="tool"),
            MarkerSpec(id="patient", family="square", edge_length=80.0, role="patient"),
        ]
    )


def obs_for(marker_id: str, pose: RigidTransform, ts: float) -> MarkerObservation:
    return MarkerObservation(marker_id=marker_id, corners_2d=None, timestamp=ts,
                             pose_in_camera=pose)


def cam_at(ts: float) -> CameraSample:
    return CameraSample(pose_world=RigidTransform.identity(), timestamp=ts)


def test_initial_states_never_seen():
    reg = make_registry()
    assert reg.state("tool").mode == "never_seen"
    assert reg.state("tool").world_pose is None


def test_observed_marker_becomes_tracked():
    reg = make_registry()
    pose = RigidTransform(np.eye(3), (0, 0, 400.0))
    reg = step_tracking(reg, [obs_for("tool", pose, 1.0)], cam_at(1.0))
    st_ = reg.state("tool")
    assert st_.mode == "tracked"
    assert st_.last_seen == 1.0
    assert np.allclose(st_.world_pose.translation, (0, 0, 400.0))
    assert reg.state("patient").mode == "never_seen"


def test_absent_marker_becomes_extended_tracked():
    reg = make_registry()
    pose = RigidTransform(np.eye(3), (0, 0, 400.0))
    reg = step_tracking(reg, [obs_for("tool", pose, 1.0)], cam_at(1.0))
    reg = step_tracking(reg, [], cam_at(2.0))
    st_ = reg.state("tool")
    assert st_.mode == "extended_tracked"
    assert np.allclose(st_.world_pose.translation, (0, 0, 400.0))
    assert st_.last_seen == 1.0


def test_reobserved_marker_returns_to_tracked():
    reg = make_registry()
    p1 = RigidTransform(np.eye(3), (0, 0, 400.0))
    p2 = RigidTransform(np.eye(3), (10, 0, 410.0))
    reg = step_tracking(reg, [obs_for("tool", p1, 1.0)], cam_at(1.0))
    reg = step_tracking(reg, [], cam_at(2.0))
    reg = step_tracking(reg, [obs_for("tool", p2, 3.0)], cam_at(3.0))
    st_ = reg.state("tool")
    assert st_.mode == "tracked"
    assert st_.last_seen == 3.0
    assert np.allclose(st_.world_pose.translation, (10, 0, 410.0))


def test_unknown_marker_rejected():
    reg = make_registry()
    with pytest.raises(UnregisteredMarkerError):
        step_tracking(reg, [obs_for("ghost", RigidTransform(np.eye(3), (0, 0, 1)), 1.0)],
                      cam_at(1.0))


def test_timestamp_regression_rejected():
    reg = make_registry()
    reg = step_tracking(reg, [], cam_at(5.0))
    with pytest.raises(OutOfOrderError):
        step_tracking(reg, [], cam_at(4.0))


def test_step_solves_pixels_when_intrinsics_given():
    reg = make_registry()
    pose = RigidTransform(rotation_about_axis((0, 1, 0), 10.0), (20, -5, 450.0))
    pixels = project_points(INTR, pose, marker_corners(50.0))
    obs = MarkerObservation(marker_id="tool", corners_2d=pixels, timestamp=1.0)
    reg = step_tracking(reg, [obs], cam_at(1.0), INTR)
    assert np.linalg.norm(reg.state("tool").world_pose.translation - pose.translation) < 1e-6


def test_step_without_pose_or_intrinsics_fails():
    reg = make_registry()
    pixels = project_points(INTR, RigidTransform(np.eye(3), (0, 0, 500.0)), marker_corners(50.0))
    obs = MarkerObservation(marker_id="tool", corners_2d=pixels, timestamp=1.0)
    with pytest.raises(ValueError):
        step_tracking(reg, [obs], cam_at(1.0))


def test_world_pose_chains_through_camera():
    reg = make_registry()
    cam_pose = RigidTransform(rotation_about_axis((0, 0, 1), 90.0), (100, 0, 0))
    obs_pose = RigidTransform(np.eye(3), (0, 0, 500.0))
    cam = CameraSample(pose_world=cam_pose, timestamp=1.0)
    reg = step_tracking(reg, [obs_for("tool", obs_pose, 1.0)], cam)
    expected = compose(cam_pose, obs_pose)
    assert np.allclose(reg.state("tool").world_pose.translation, expected.translation)


@given(st.lists(st.sampled_from(["see_tool", "see_both", "see_none"]), min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_modes_always_valid_and_never_forget(events):
    reg = make_registry()
    pose = RigidTransform(np.eye(3), (0, 0, 400.0))
    seen = {"tool": False, "patient": False}
    for i, ev in enumerate(events):
        frame = []
        if ev in ("see_tool", "see_both"):
            frame.append(obs_for("tool", pose, float(i)))
            seen["tool"] = True
        if ev == "see_both":
            frame.append(obs_for("patient", pose, float(i)))
            seen["patient"] = True
        reg = step_tracking(reg, frame, cam_at(float(i)))
        for mid, was_seen in seen.items():
            mode = reg.state(mid).mode
            if was_seen:
                assert mode in ("tracked", "extended_tracked")
            else:
                assert mode == "never_seen"
