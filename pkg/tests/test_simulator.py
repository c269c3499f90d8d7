"""Synthetic tracking data: noise streams, sessions, Monte-Carlo machinery."""

import numpy as np
import pytest

from navkit.calibration import (
    DivotSpec,
    ToolCalibration,
    calibrate_with_calibrator,
    pivot_calibrate,
)
from navkit.errors import NotVisibleError, UnknownMetricError
from navkit.geometry import RigidTransform, compose, rotation_about_axis, rotation_angle_between
from navkit.simulator import (
    CSV_HEADER,
    DEFAULT_CALIBRATOR_WORLD,
    METRIC_NAMES,
    NoiseModel,
    Scenario,
    TrialStatistics,
    default_scenario,
    derive_seed,
    rng_for_trial,
    run_monte_carlo,
    simulate_calibration_session,
    simulate_pivot_session,
    simulate_registration_trial,
    statistics_to_csv,
    synthesize_observation,
)
from navkit.tracking import CameraIntrinsics, CameraSample

QUIET = NoiseModel()
CAMERA = CameraSample(pose_world=RigidTransform.identity(), timestamp=0.0)
CALIB = ToolCalibration(
    tool_marker_id="tool",
    tip_in_marker=RigidTransform(np.eye(3), (0.0, 0.0, 150.0)),
    method="by_design",
)


# ---------------------------------------------------------------------------
# noise model and seed derivation


def test_noise_model_rejects_negative_sigmas():
    with pytest.raises(ValueError):
        NoiseModel(sigma_t=-0.1)
    with pytest.raises(ValueError):
        NoiseModel(sigma_r=-0.1)
    with pytest.raises(ValueError):
        NoiseModel(sigma_px=-0.1)


def test_noise_model_seed_wraps_to_64_bits():
    assert NoiseModel(seed=2**64 + 5).seed == 5


def test_noise_model_label():
    assert NoiseModel(0.5, 0.25, 0.0, 7).label() == "sigma_t=0.5;sigma_r=0.25;sigma_px=0;seed=7"


def test_derive_seed_is_deterministic_and_spread():
    assert derive_seed(42, 0) == derive_seed(42, 0)
    children = {derive_seed(42, i) for i in range(100)}
    assert len(children) == 100
    assert derive_seed(42, 0) != derive_seed(43, 0)
    assert all(0 <= c < 2**64 for c in children)


def test_rng_for_trial_reproducible():
    a = rng_for_trial(9, 3).normal(size=8)
    b = rng_for_trial(9, 3).normal(size=8)
    c = rng_for_trial(9, 4).normal(size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# single observations


MARKER_WORLD = RigidTransform(rotation_about_axis((0, 1, 0), 10.0), (20.0, -10.0, 500.0))


def test_observation_zero_noise_is_exact():
    obs = synthesize_observation(MARKER_WORLD, CAMERA, QUIET, np.random.default_rng(0))
    assert np.allclose(obs.pose_in_camera.translation, MARKER_WORLD.translation)
    assert np.allclose(obs.pose_in_camera.rotation, MARKER_WORLD.rotation)
    assert obs.corners_2d is None
    assert obs.timestamp == CAMERA.timestamp


def test_observation_translation_noise_statistics():
    rng = np.random.default_rng(123)
    noise = NoiseModel(sigma_t=0.5)
    deltas = np.array(
        [
            synthesize_observation(MARKER_WORLD, CAMERA, noise, rng).pose_in_camera.translation
            - MARKER_WORLD.translation
            for _ in range(10_000)
        ]
    )
    stds = deltas.std(axis=0)
    assert np.all(np.abs(stds - 0.5) < 0.05 * 0.5 + 0.01)
    assert np.all(np.abs(deltas.mean(axis=0)) < 0.02)


def test_observation_rotation_noise_statistics():
    rng = np.random.default_rng(321)
    noise = NoiseModel(sigma_r=1.0)
    angles = np.array(
        [
            rotation_angle_between(
                synthesize_observation(MARKER_WORLD, CAMERA, noise, rng).pose_in_camera,
                MARKER_WORLD,
            )
            for _ in range(10_000)
        ]
    )
    expected = np.sqrt(2.0 / np.pi)  # mean of |N(0, 1 degree)|
    assert abs(angles.mean() - expected) < 0.05 * expected


def test_observation_behind_camera_rejected():
    behind = RigidTransform(np.eye(3), (0.0, 0.0, -5.0))
    with pytest.raises(NotVisibleError):
        synthesize_observation(behind, CAMERA, QUIET, np.random.default_rng(0))


def test_pixel_mode_needs_projection_parameters():
    noise = NoiseModel(sigma_px=0.5)
    with pytest.raises(ValueError):
        synthesize_observation(MARKER_WORLD, CAMERA, noise, np.random.default_rng(0))


def test_pixel_mode_leaves_pose_unsolved():
    noise = NoiseModel(sigma_px=0.5)
    obs = synthesize_observation(
        MARKER_WORLD, CAMERA, noise, np.random.default_rng(0),
        intrinsics=CameraIntrinsics(1000, 1000, 0, 0), edge_length=50.0,
    )
    assert obs.pose_in_camera is None
    assert obs.corners_2d.shape == (4, 2)


def test_pose_mode_can_carry_corners():
    obs = synthesize_observation(
        MARKER_WORLD, CAMERA, QUIET, np.random.default_rng(0),
        intrinsics=CameraIntrinsics(1000, 1000, 0, 0), edge_length=50.0,
    )
    assert obs.pose_in_camera is not None
    assert obs.corners_2d.shape == (4, 2)


# ---------------------------------------------------------------------------
# sessions


def test_pivot_session_zero_noise_keeps_tip_fixed():
    samples = simulate_pivot_session(CALIB, 30.0, 60, QUIET)
    tip = CALIB.tip_in_marker.translation
    for s in samples:
        pose = s.marker_world_pose
        tip_world = pose.rotation @ tip + pose.translation
        assert np.linalg.norm(tip_world - (100.0, 50.0, 200.0)) < 1e-9
    result = pivot_calibrate(samples)
    assert np.linalg.norm(np.asarray(result.tip_in_marker) - tip) < 1e-9
    assert samples[1].timestamp == pytest.approx(1.0 / 30.0)


def test_pivot_session_validation():
    with pytest.raises(ValueError):
        simulate_pivot_session(CALIB, 0.0, 60, QUIET)
    with pytest.raises(ValueError):
        simulate_pivot_session(CALIB, 95.0, 60, QUIET)
    with pytest.raises(ValueError):
        simulate_pivot_session(CALIB, 30.0, 2, QUIET)


def test_pivot_session_same_seed_identical():
    noise = NoiseModel(sigma_t=0.5, sigma_r=0.25, seed=11)
    a = simulate_pivot_session(CALIB, 30.0, 40, noise)
    b = simulate_pivot_session(CALIB, 30.0, 40, noise)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.marker_world_pose.rotation, sb.marker_world_pose.rotation)
        assert np.array_equal(sa.marker_world_pose.translation, sb.marker_world_pose.translation)


def test_pivot_session_different_seeds_differ():
    a = simulate_pivot_session(CALIB, 30.0, 40, NoiseModel(sigma_t=0.5, seed=1))
    b = simulate_pivot_session(CALIB, 30.0, 40, NoiseModel(sigma_t=0.5, seed=2))
    assert not np.array_equal(
        a[0].marker_world_pose.translation, b[0].marker_world_pose.translation
    )


DIVOT = DivotSpec(
    owner_marker_id="calibrator",
    divot_in_marker=RigidTransform(rotation_about_axis((0, 1, 0), 17.0), (20.0, -10.0, 100.0)),
)


def test_calibration_session_zero_noise_recovers_tip():
    pairs = simulate_calibration_session(CALIB, DIVOT, 10, QUIET)
    assert len(pairs) == 10
    est = calibrate_with_calibrator(pairs, DIVOT)
    assert np.linalg.norm(est.tip_in_marker.translation - CALIB.tip_in_marker.translation) < 1e-9
    tool_world, owner_world = pairs[0]
    assert np.allclose(owner_world.rotation, DEFAULT_CALIBRATOR_WORLD.rotation)
    divot_world = compose(owner_world, DIVOT.divot_in_marker)
    tip_world = tool_world.rotation @ CALIB.tip_in_marker.translation + tool_world.translation
    assert np.linalg.norm(tip_world - divot_world.translation) < 1e-9


def test_calibration_session_validation():
    with pytest.raises(ValueError):
        simulate_calibration_session(CALIB, DIVOT, 0, QUIET)


def test_registration_trial_zero_noise_is_exact():
    truth = RigidTransform(rotation_about_axis((0.2, 1.0, 0.1), 20.0), (10.0, -20.0, 430.0))
    model = np.array([[20.0, 0, 10], [-25, 30, 0], [0, -40, 25], [45, 35, -15]])
    held = np.array([[5.0, 5.0, 40.0]])
    result, tre_value = simulate_registration_trial(model, truth, QUIET, held)
    assert result.fre < 1e-9
    assert tre_value < 1e-9
    assert np.abs(result.image_to_world.rotation - truth.rotation).max() < 1e-9


def test_registration_trial_reproducible_with_rng():
    truth = RigidTransform(rotation_about_axis((0, 0, 1), 30.0), (5.0, 5.0, 5.0))
    model = np.array([[20.0, 0, 10], [-25, 30, 0], [0, -40, 25], [45, 35, -15]])
    held = np.array([[0.0, 0.0, 0.0]])
    noise = NoiseModel(sigma_t=1.0)
    r1, t1 = simulate_registration_trial(model, truth, noise, held, rng=rng_for_trial(5, 0))
    r2, t2 = simulate_registration_trial(model, truth, noise, held, rng=rng_for_trial(5, 0))
    assert r1.fre == r2.fre
    assert t1 == t2


# ---------------------------------------------------------------------------
# scenario and Monte Carlo


def test_default_scenario_shape():
    sc = default_scenario()
    assert {spec.id for spec, _ in sc.markers} == {"patient", "tool", "calibrator", "reference"}
    assert sc.sample_count == 1200
    assert sc.calibration_sample_count == 180
    assert len(sc.landmarks) == 6
    assert len(sc.heldout_landmarks) == 4
    assert sc.marker_world("tool").translation[2] == 400.0
    with pytest.raises(KeyError):
        sc.marker_world("nonexistent")


def test_scenario_timing_validation():
    with pytest.raises(ValueError):
        Scenario(duration=0.0)
    with pytest.raises(ValueError):
        Scenario(frame_rate=-1.0)


def test_trial_statistics_validation():
    with pytest.raises(ValueError):
        TrialStatistics("c", "m", 1.0, 0.1, 0.5, 1.5, 0)
    with pytest.raises(ValueError):
        TrialStatistics("c", "m", 1.0, -0.1, 0.5, 1.5, 5)


def test_run_monte_carlo_validation():
    sc = default_scenario()
    with pytest.raises(ValueError):
        run_monte_carlo(sc, [QUIET], 0, "registration_fre")
    with pytest.raises(UnknownMetricError):
        run_monte_carlo(sc, [QUIET], 1, "made_up_metric")
    assert "registration_fre" in METRIC_NAMES


def test_run_monte_carlo_zero_noise_registration():
    sc = default_scenario()
    stats = run_monte_carlo(sc, [QUIET], 3, "registration_fre")
    assert len(stats) == 1
    assert stats[0].mean < 1e-9
    assert stats[0].count == 3
    assert stats[0].metric == "registration_fre"
    assert stats[0].condition == QUIET.label()


def test_run_monte_carlo_is_order_independent():
    sc = default_scenario()
    noise = NoiseModel(sigma_t=1.0, seed=4)
    a = run_monte_carlo(sc, [noise], 4, "registration_tre")
    b = run_monte_carlo(sc, [noise], 4, "registration_tre")
    assert a == b
    assert a[0].std > 0.0
    assert a[0].min <= a[0].mean <= a[0].max


def test_run_monte_carlo_multiple_conditions():
    sc = default_scenario()
    quiet = NoiseModel(seed=1)
    loud = NoiseModel(sigma_t=2.0, seed=1)
    stats = run_monte_carlo(sc, [quiet, loud], 3, "registration_fre")
    assert [s.condition for s in stats] == [quiet.label(), loud.label()]
    assert stats[0].mean < stats[1].mean


def test_statistics_to_csv_layout():
    stats = [TrialStatistics("n0", "registration_fre", 1.5, 0.25, 1.0, 2.0, 10)]
    text = statistics_to_csv(stats)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER == "condition,metric,mean,std,min,max,n"
    assert lines[1] == "n0,registration_fre,1.5,0.25,1,2,10"
    assert text.endswith("\n")
