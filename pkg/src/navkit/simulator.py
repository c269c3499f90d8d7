"""Synthetic ground-truth scenes and noisy observation streams standing in
for a head-mounted tracker and a reference optical tracker, plus the
Monte-Carlo machinery that summarizes trial statistics.

Noise structure
---------------
Single observations (synthesize_observation) carry pure white noise:
per-axis Gaussian translation, Gaussian angle about a random axis, and
optional corner pixel noise.

Session synthesizers (simulate_pivot_session, simulate_calibration_session)
additionally model a slowly varying world-anchoring drift: a first-order
Gauss-Markov (AR(1)) pose error, applied on the world side and common to
every marker in a frame, with half of the variance budget by default and
a 5 s correlation time. Inside-out tracking anchors marker poses to a
self-localized map whose slow error does not average away over a long
recording; relative chains between two markers reject it, which is why
divot-based calibration beats pivoting under the same noise level. The
per-sample marginal standard deviations always equal the NoiseModel
sigmas regardless of the drift fraction.

Determinism
-----------
All randomness flows through numpy's default generator (PCG64) seeded
explicitly. Trial i of a condition uses a child seed derived from the
condition seed: the first 8 bytes (big-endian) of
SHA-256(b"navkit-stream" + seed_le64 + index_le64).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics, registration
from .calibration import (
    DivotSpec,
    PivotSample,
    ToolCalibration,
    calibrate_marker_to_marker,
    calibrate_with_calibrator,
    pivot_calibrate,
)
from .errors import NotVisibleError, UnknownMetricError
from .geometry import (
    Point3,
    RigidTransform,
    compose,
    format_float,
    invert,
    rotation_about_axis,
    rotation_from_rotvec,
    transform_points,
)
from .metrics import Trajectory
from .registration import RegistrationResult, point_based_register
from .tracking import CameraIntrinsics, CameraSample, MarkerObservation, MarkerSpec, marker_corners, project_points

DEFAULT_RATE_HZ = 30.0
DRIFT_TIME_CONSTANT_S = 5.0
DRIFT_FRACTION = 0.5
PIVOT_REVOLUTIONS = 2.0
DEFAULT_PIVOT_WORLD = (100.0, 50.0, 200.0)

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseModel:
    """Observation noise: per-axis translation sigma (mm, camera frame),
    rotation angle sigma (degrees, about a uniformly random axis),
    optional corner pixel sigma (px), and the stream seed."""

    sigma_t: float = 0.0
    sigma_r: float = 0.0
    sigma_px: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_t < 0 or self.sigma_r < 0 or self.sigma_px < 0:
            raise ValueError("noise sigmas must be non-negative")
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)

    def label(self) -> str:
        return (
            f"sigma_t={format_float(self.sigma_t)};"
            f"sigma_r={format_float(self.sigma_r)};"
            f"sigma_px={format_float(self.sigma_px)};"
            f"seed={self.seed}"
        )


def derive_seed(parent_seed: int, index: int) -> int:
    """Child stream seed: first 8 bytes (big-endian) of
    SHA-256(b"navkit-stream" + parent_le64 + index_le64)."""
    parent = (int(parent_seed) & _SEED_MASK).to_bytes(8, "little")
    idx = (int(index) & _SEED_MASK).to_bytes(8, "little")
    digest = hashlib.sha256(b"navkit-stream" + parent + idx).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for_trial(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, trial_index))


class TrackingErrorProcess:
    """Session error generator: shared AR(1) world-anchoring drift plus
    per-marker white detection noise.

    drift_fraction splits the variance budget: drift sigmas are
    sqrt(fraction) * sigma, white sigmas sqrt(1 - fraction) * sigma, so
    the marginal per-sample deviation matches the NoiseModel. The drift
    rotation evolves as a rotation-vector AR(1) with matching RMS angle.
    """

    def __init__(
        self,
        noise: NoiseModel,
        rng: np.random.Generator,
        dt: float,
        time_constant_s: float = DRIFT_TIME_CONSTANT_S,
        drift_fraction: float = DRIFT_FRACTION,
    ):
        if not 0.0 <= drift_fraction <= 1.0:
            raise ValueError("drift_fraction must lie in [0, 1]")
        self._rng = rng
        root = np.sqrt(drift_fraction)
        self._sigma_t_drift = noise.sigma_t * root
        self._sigma_r_drift = np.radians(noise.sigma_r) * root / np.sqrt(3.0)
        white = np.sqrt(1.0 - drift_fraction)
        self._sigma_t_white = noise.sigma_t * white
        self._sigma_r_white = np.radians(noise.sigma_r) * white
        self._rho = np.exp(-dt / time_constant_s) if time_constant_s > 0 else 0.0
        self._state_t = rng.normal(0.0, 1.0, 3)
        self._state_r = rng.normal(0.0, 1.0, 3)

    def step(self) -> tuple[np.ndarray, np.ndarray]:
        """Advance the drift one frame; returns (rotation 3x3, translation)
        of the common world-side error transform."""
        q = np.sqrt(1.0 - self._rho**2)
        self._state_t = self._rho * self._state_t + q * self._rng.normal(0.0, 1.0, 3)
        self._state_r = self._rho * self._state_r + q * self._rng.normal(0.0, 1.0, 3)
        rot = rotation_from_rotvec(self._sigma_r_drift * self._state_r)
        return rot, self._sigma_t_drift * self._state_t

    def white(self) -> tuple[np.ndarray, np.ndarray]:
        """One per-marker white error: (rotation 3x3, translation)."""
        shift = self._rng.normal(0.0, self._sigma_t_white, 3)
        axis = self._rng.normal(0.0, 1.0, 3)
        angle = self._rng.normal(0.0, self._sigma_r_white)
        norm = np.linalg.norm(axis)
        if norm <= 0:
            return np.eye(3), shift
        return rotation_from_rotvec(axis * (angle / norm)), shift

    def perturb(self, rotation: np.ndarray, translation: np.ndarray,
                drift: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Apply the shared drift (full left composition) then a fresh
        white error (rotation left-applied, translation additive)."""
        dr, dtv = drift
        r1 = dr @ rotation
        t1 = dr @ translation + dtv
        wr, wt = self.white()
        return wr @ r1, t1 + wt


def _perturb_pose_white(
    pose: RigidTransform, noise: NoiseModel, rng: np.random.Generator
) -> RigidTransform:
    shift = rng.normal(0.0, noise.sigma_t, 3)
    axis = rng.normal(0.0, 1.0, 3)
    angle = np.radians(rng.normal(0.0, noise.sigma_r))
    norm = np.linalg.norm(axis)
    rot = rotation_from_rotvec(axis * (angle / norm)) if norm > 0 else np.eye(3)
    return RigidTransform(rot @ pose.rotation, pose.translation + shift)


def synthesize_observation(
    true_marker_world: RigidTransform,
    camera: CameraSample,
    noise: NoiseModel,
    stream_state: np.random.Generator,
    intrinsics: CameraIntrinsics | None = None,
    edge_length: float | None = None,
    marker_id: str = "marker",
    timestamp: float | None = None,
) -> MarkerObservation:
    """One noisy observation of a marker.

    Pose mode (sigma_px = 0): the ideal camera-frame pose is perturbed by
    white translation/rotation noise; when intrinsics and edge_length are
    supplied the perturbed pose's exact corner projections ride along so
    the observation can be recorded as pixels.

    Pixel mode (sigma_px > 0): corner projections of the (possibly
    pose-perturbed) pose receive per-coordinate Gaussian noise and
    pose_in_camera stays None, leaving the solve to the tracking module.
    """
    ideal = compose(invert(camera.pose_world), true_marker_world)
    if ideal.translation[2] <= 0:
        raise NotVisibleError("marker is behind the camera")
    noisy = _perturb_pose_white(ideal, noise, stream_state)
    ts = camera.timestamp if timestamp is None else timestamp
    if noise.sigma_px > 0:
        if intrinsics is None or edge_length is None:
            raise ValueError("pixel-noise mode requires intrinsics and edge_length")
        corners = project_points(intrinsics, noisy, marker_corners(edge_length))
        corners = corners + stream_state.normal(0.0, noise.sigma_px, (4, 2))
        return MarkerObservation(marker_id=marker_id, corners_2d=corners, timestamp=ts)
    corners = None
    if intrinsics is not None and edge_length is not None:
        corners = project_points(intrinsics, noisy, marker_corners(edge_length))
    return MarkerObservation(
        marker_id=marker_id, corners_2d=corners, timestamp=ts, pose_in_camera=noisy
    )


def _tilt_rotation(direction: np.ndarray) -> np.ndarray:
    """Twist-free rotation mapping +z onto the given unit direction."""
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, direction)
    s = float(np.linalg.norm(axis))
    c = float(z @ direction)
    if s < 1e-15:
        return np.eye(3) if c > 0 else rotation_about_axis((1.0, 0.0, 0.0), 180.0)
    return rotation_about_axis(axis, np.degrees(np.arctan2(s, c)))


def simulate_pivot_session(
    true_calib: ToolCalibration,
    cone_half_angle: float,
    sample_count: int,
    noise: NoiseModel,
    *,
    pivot_world: Sequence[float] = DEFAULT_PIVOT_WORLD,
    rate_hz: float = DEFAULT_RATE_HZ,
    revolutions: float = PIVOT_REVOLUTIONS,
    drift_time_constant_s: float = DRIFT_TIME_CONSTANT_S,
    drift_fraction: float = DRIFT_FRACTION,
    rng: np.random.Generator | None = None,
) -> list[PivotSample]:
    """Marker world poses of a tool pivoting slowly about a fixed tip.

    The sweep is a continuous spiral: tilt ramps linearly from 0 to the
    cone half-angle while the azimuth makes `revolutions` turns, starting
    at a random azimuth. Noise combines shared anchoring drift with white
    per-sample error (see module docstring).
    """
    if not 0.0 < cone_half_angle < 90.0:
        raise ValueError("cone_half_angle must lie in (0, 90) degrees")
    if sample_count < 3:
        raise ValueError("pivot session needs at least 3 samples")
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    tip = np.asarray(true_calib.tip_in_marker.translation)
    pivot = np.asarray(pivot_world, dtype=float).reshape(3)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    process = TrackingErrorProcess(
        noise, rng, dt=1.0 / rate_hz,
        time_constant_s=drift_time_constant_s, drift_fraction=drift_fraction,
    )
    alpha = np.radians(cone_half_angle)
    samples: list[PivotSample] = []
    for k in range(sample_count):
        u = k / (sample_count - 1)
        theta = alpha * u
        phi = 2.0 * np.pi * revolutions * u + phase
        direction = np.array(
            [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
        )
        rotation = _tilt_rotation(direction)
        translation = pivot - rotation @ tip
        rotation, translation = process.perturb(rotation, translation, process.step())
        samples.append(
            PivotSample(RigidTransform(rotation, translation), timestamp=k / rate_hz)
        )
    return samples


DEFAULT_CALIBRATOR_WORLD = RigidTransform(
    rotation_about_axis((1.0, 0.1, 0.0), -40.0), np.array([-60.0, 30.0, 420.0])
)


def simulate_calibration_session(
    true_calib: ToolCalibration,
    hole: DivotSpec,
    sample_count: int,
    noise: NoiseModel,
    *,
    owner_world: RigidTransform = DEFAULT_CALIBRATOR_WORLD,
    rate_hz: float = DEFAULT_RATE_HZ,
    drift_time_constant_s: float = DRIFT_TIME_CONSTANT_S,
    drift_fraction: float = DRIFT_FRACTION,
    rng: np.random.Generator | None = None,
) -> list[tuple[RigidTransform, RigidTransform]]:
    """Paired (tool marker, divot-owner marker) world poses with the tool
    tip seated in the divot, both markers static, shared anchoring drift
    plus independent white noise per marker. Serves both the calibrator
    and the reference-marker (marker-to-marker) methods."""
    if sample_count < 1:
        raise ValueError("calibration session needs at least 1 sample")
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    tip_world = compose(owner_world, hole.divot_in_marker)
    tool_world = compose(tip_world, invert(true_calib.tip_in_marker))
    process = TrackingErrorProcess(
        noise, rng, dt=1.0 / rate_hz,
        time_constant_s=drift_time_constant_s, drift_fraction=drift_fraction,
    )
    pairs: list[tuple[RigidTransform, RigidTransform]] = []
    for _ in range(sample_count):
        drift = process.step()
        tr, tt = process.perturb(tool_world.rotation, tool_world.translation, drift)
        cr, ct = process.perturb(owner_world.rotation, owner_world.translation, drift)
        pairs.append((RigidTransform(tr, tt), RigidTransform(cr, ct)))
    return pairs


def simulate_registration_trial(
    landmarks,
    true_transform: RigidTransform,
    noise: NoiseModel,
    heldout,
    rng: np.random.Generator | None = None,
) -> tuple[RegistrationResult, float]:
    """One synthetic registration: patient points are the transformed model
    points plus per-axis annotation noise; the target error is evaluated
    on noise-free held-out points (isolating transform error, the way a
    reference tracker measures targets)."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    model = np.atleast_2d(np.asarray(landmarks, dtype=float))
    held = np.atleast_2d(np.asarray(heldout, dtype=float))
    patient = transform_points(true_transform, model) + rng.normal(
        0.0, noise.sigma_t, model.shape
    )
    result = point_based_register(model, patient)
    tre_value = metrics.tre(
        held, transform_points(true_transform, held), result.image_to_world
    )
    return result, tre_value


@dataclass(frozen=True)
class Scenario:
    """Ground truth for a simulated experiment: markers with world poses,
    a camera path, tool calibrations, landmark/trajectory truth, and
    session timing. Extra knobs (cone angle, divots, calibration-session
    duration) parameterize the specific experiment designs."""

    markers: tuple = ()
    camera_path: tuple = ()
    tool_calibrations: tuple = ()
    landmarks: tuple = ()
    heldout_landmarks: tuple = ()
    image_to_world: RigidTransform = field(default_factory=RigidTransform.identity)
    trajectories: tuple = ()
    frame_rate: float = DEFAULT_RATE_HZ
    duration: float = 40.0
    cone_half_angle_deg: float = 30.0
    calibration_duration: float = 6.0
    calibrator_divot: DivotSpec | None = None
    reference_divot: DivotSpec | None = None

    def __post_init__(self) -> None:
        if self.duration <= 0 or self.frame_rate <= 0:
            raise ValueError("duration and frame_rate must be positive")

    @property
    def sample_count(self) -> int:
        return int(round(self.frame_rate * self.duration))

    @property
    def calibration_sample_count(self) -> int:
        return int(round(self.frame_rate * self.calibration_duration))

    def marker_world(self, marker_id: str) -> RigidTransform:
        for spec, pose in self.markers:
            if spec.id == marker_id:
                return pose
        raise KeyError(f"scenario has no marker {marker_id!r}")


def default_scenario() -> Scenario:
    """A desk-scale scene: 80 mm patient marker, 50 mm pointer tool marker,
    100 mm calibrator plate, 80 mm reference marker, static camera at the
    world origin, six registration landmarks with four held-out targets,
    and one planned trajectory."""
    patient = MarkerSpec(id="patient", family="square", edge_length=80.0, role="patient")
    tool = MarkerSpec(id="tool", family="square", edge_length=50.0, role="tool")
    calibrator = MarkerSpec(id="calibrator", family="square", edge_length=100.0, role="calibrator")
    reference = MarkerSpec(id="reference", family="square", edge_length=80.0, role="reference")
    markers = (
        (patient, RigidTransform(rotation_about_axis((0.0, 1.0, 0.0), 15.0), (-80.0, 40.0, 450.0))),
        (tool, RigidTransform(rotation_about_axis((1.0, 0.0, 0.0), -10.0), (60.0, -30.0, 400.0))),
        (calibrator, DEFAULT_CALIBRATOR_WORLD),
        (reference, RigidTransform(rotation_about_axis((0.0, 0.0, 1.0), 30.0), (90.0, 60.0, 430.0))),
    )
    duration = 40.0
    rate = DEFAULT_RATE_HZ
    camera_path = tuple(
        CameraSample(pose_world=RigidTransform.identity(), timestamp=k / rate)
        for k in range(int(rate * 2))
    )
    calib = ToolCalibration(
        tool_marker_id="tool",
        tip_in_marker=RigidTransform(np.eye(3), (0.0, 0.0, 150.0)),
        method="by_design",
    )
    landmarks = (
        ("L1", Point3(20.0, 0.0, 10.0)),
        ("L2", Point3(-25.0, 30.0, 0.0)),
        ("L3", Point3(0.0, -40.0, 25.0)),
        ("L4", Point3(45.0, 35.0, -15.0)),
        ("L5", Point3(-30.0, -25.0, -20.0)),
        ("L6", Point3(10.0, 50.0, 30.0)),
    )
    heldout = (
        ("T1", Point3(5.0, 5.0, 40.0)),
        ("T2", Point3(-15.0, 20.0, -30.0)),
        ("T3", Point3(30.0, -10.0, 15.0)),
        ("T4", Point3(0.0, 0.0, 0.0)),
    )
    image_to_world = RigidTransform(
        rotation_about_axis((0.2, 1.0, 0.1), 20.0), (10.0, -20.0, 430.0)
    )
    trajectory = Trajectory(
        entry=Point3(10.0, 5.0, 0.0), exit=Point3(-20.0, 15.0, 60.0), label="T1"
    )
    calibrator_divot = DivotSpec(
        owner_marker_id="calibrator",
        divot_in_marker=RigidTransform(
            rotation_about_axis((0.0, 1.0, 0.0), 17.0), (20.0, -10.0, 100.0)
        ),
    )
    reference_divot = DivotSpec(
        owner_marker_id="reference",
        divot_in_marker=RigidTransform(
            rotation_about_axis((1.0, 0.0, 0.0), -12.0), (-30.0, 15.0, 80.0)
        ),
    )
    return Scenario(
        markers=markers,
        camera_path=camera_path,
        tool_calibrations=(calib,),
        landmarks=landmarks,
        heldout_landmarks=heldout,
        image_to_world=image_to_world,
        trajectories=(trajectory,),
        frame_rate=rate,
        duration=duration,
        calibrator_divot=calibrator_divot,
        reference_divot=reference_divot,
    )


@dataclass(frozen=True)
class TrialStatistics:
    """Per-condition summary of a named metric over Monte-Carlo trials."""

    condition: str
    metric: str
    mean: float
    std: float
    min: float
    max: float
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("trial count must be at least 1")
        if self.std < 0:
            raise ValueError("std must be non-negative")


def _metric_pivot(scenario: Scenario, noise: NoiseModel, rng: np.random.Generator) -> float:
    calib = scenario.tool_calibrations[0]
    session = simulate_pivot_session(
        calib, scenario.cone_half_angle_deg, scenario.sample_count, noise, rng=rng
    )
    result = pivot_calibrate(session)
    return float(
        np.linalg.norm(np.asarray(result.tip_in_marker) - calib.tip_in_marker.translation)
    )


def _divot_metric(solver: Callable, divot_attr: str) -> Callable:
    def run(scenario: Scenario, noise: NoiseModel, rng: np.random.Generator) -> float:
        calib = scenario.tool_calibrations[0]
        divot = getattr(scenario, divot_attr)
        if divot is None:
            raise UnknownMetricError(f"scenario lacks the divot for {divot_attr}")
        try:
            owner_world = scenario.marker_world(divot.owner_marker_id)
        except KeyError:
            owner_world = DEFAULT_CALIBRATOR_WORLD
        session = simulate_calibration_session(
            calib, divot, scenario.calibration_sample_count, noise,
            owner_world=owner_world, rate_hz=scenario.frame_rate, rng=rng,
        )
        estimated = solver(session, divot, tool_marker_id=calib.tool_marker_id)
        return float(
            np.linalg.norm(
                estimated.tip_in_marker.translation - calib.tip_in_marker.translation
            )
        )

    return run


def _metric_registration(kind: str) -> Callable:
    def run(scenario: Scenario, noise: NoiseModel, rng: np.random.Generator) -> float:
        model = np.array([np.asarray(p) for _, p in scenario.landmarks])
        held = np.array([np.asarray(p) for _, p in scenario.heldout_landmarks])
        result, tre_value = simulate_registration_trial(
            model, scenario.image_to_world, noise, held, rng=rng
        )
        return result.fre if kind == "fre" else tre_value

    return run


_METRICS: dict[str, Callable] = {
    "pivot_tip_error": _metric_pivot,
    "calibrator_tip_error": _divot_metric(calibrate_with_calibrator, "calibrator_divot"),
    "marker_to_marker_tip_error": _divot_metric(calibrate_marker_to_marker, "reference_divot"),
    "registration_fre": _metric_registration("fre"),
    "registration_tre": _metric_registration("tre"),
}

METRIC_NAMES = tuple(sorted(_METRICS))


def run_monte_carlo(
    scenario: Scenario,
    conditions: Sequence[NoiseModel],
    trials: int,
    metric: str,
) -> list[TrialStatistics]:
    """Per-condition statistics of a named metric. Trial i of a condition
    runs on the child stream derived from (condition seed, i), so results
    do not depend on execution order."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if metric not in _METRICS:
        raise UnknownMetricError(
            f"unknown metric {metric!r}; choose from {', '.join(METRIC_NAMES)}"
        )
    fn = _METRICS[metric]
    out: list[TrialStatistics] = []
    for condition in conditions:
        values = np.array(
            [fn(scenario, condition, rng_for_trial(condition.seed, i)) for i in range(trials)]
        )
        out.append(
            TrialStatistics(
                condition=condition.label(),
                metric=metric,
                mean=float(np.mean(values)),
                std=float(np.std(values, ddof=1)) if trials > 1 else 0.0,
                min=float(np.min(values)),
                max=float(np.max(values)),
                count=trials,
            )
        )
    return out


CSV_HEADER = "condition,metric,mean,std,min,max,n"


def statistics_to_csv(stats: Sequence[TrialStatistics]) -> str:
    """CSV rows (with header) for a list of trial statistics."""
    lines = [CSV_HEADER]
    for s in stats:
        lines.append(
            ",".join(
                [
                    s.condition,
                    s.metric,
                    format_float(s.mean),
                    format_float(s.std),
                    format_float(s.min),
                    format_float(s.max),
                    str(s.count),
                ]
            )
        )
    return "\n".join(lines) + "\n"
