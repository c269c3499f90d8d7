"""Marker pose estimation from 2D corner detections and the
tracked / extended-tracked state machine.

A square marker's pose in the camera frame is recovered from its four
corner pixels by a planar perspective-n-point solve: a normalized-DLT
homography is decomposed into two pose candidates, the candidate placing
the marker in front of the camera with lower reprojection error wins,
and Gauss-Newton iterations on the reprojection residual polish it.

Marker-frame convention: origin at the pattern center, x right, y up,
z out of the pattern plane; corners ordered counterclockwise starting
at the top-left, i.e. (-e/2,+e/2), (-e/2,-e/2), (+e/2,-e/2), (+e/2,+e/2)
for edge length e. Every downstream transform depends on this ordering.

World chaining: T_world_marker = T_world_camera . T_camera_marker.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import geometry
from .errors import (
    DegenerateConfigurationError,
    InsufficientDataError,
    NoValidPoseError,
    OutOfOrderError,
    UnregisteredMarkerError,
)
from .geometry import RigidTransform

MARKER_ROLES = ("patient", "tool", "reference", "calibrator")

TRACKING_MODES = ("never_seen", "tracked", "extended_tracked")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels.

    image_width / image_height are optional; when both are given the
    principal point must lie inside the image and visibility checks use
    the bounds, otherwise the image is treated as unbounded.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int | None = None
    image_height: int | None = None

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.image_width is not None and self.image_height is not None:
            if not (0 <= self.cx <= self.image_width and 0 <= self.cy <= self.image_height):
                raise ValueError("principal point must lie inside the image")

    def contains(self, uv: np.ndarray) -> bool:
        if self.image_width is None or self.image_height is None:
            return True
        u, v = float(uv[0]), float(uv[1])
        return 0 <= u <= self.image_width and 0 <= v <= self.image_height


@dataclass(frozen=True)
class MarkerSpec:
    """A physical square marker: identifier, pattern family tag, edge
    length in millimeters, and its role in the navigation setup."""

    id: str
    family: str
    edge_length: float
    role: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("marker id must be non-empty")
        if self.edge_length <= 0:
            raise ValueError("edge_length must be positive")
        if self.role not in MARKER_ROLES:
            raise ValueError(f"role must be one of {MARKER_ROLES}, got {self.role!r}")


def marker_corners(edge_length: float) -> np.ndarray:
    """Corner coordinates (4, 3) in the marker frame, z = 0 plane,
    counterclockwise starting top-left."""
    e = edge_length / 2.0
    return np.array(
        [[-e, e, 0.0], [-e, -e, 0.0], [e, -e, 0.0], [e, e, 0.0]]
    )


@dataclass(frozen=True)
class MarkerObservation:
    """One detection of a marker in one camera frame.

    corners_2d: the four corner pixels, counterclockwise from top-left.
    pose_in_camera stays None until a PnP solve fills it in.
    """

    marker_id: str
    corners_2d: np.ndarray | None
    timestamp: float
    pose_in_camera: RigidTransform | None = None

    def __post_init__(self) -> None:
        if self.corners_2d is not None:
            c = np.asarray(self.corners_2d, dtype=float)
            if c.shape != (4, 2):
                raise ValueError(f"corners_2d must be (4, 2), got {c.shape}")
            c.setflags(write=False)
            object.__setattr__(self, "corners_2d", c)


@dataclass(frozen=True)
class CameraSample:
    """Camera pose in the world frame at one timestamp."""

    pose_world: RigidTransform
    timestamp: float


@dataclass(frozen=True)
class TrackedMarkerState:
    """Tracking state of one marker.

    mode 'tracked': seen in the current frame, world_pose fresh.
    mode 'extended_tracked': previously seen; world_pose is held at the
    last tracked value indefinitely, staleness exposed via last_seen.
    mode 'never_seen': no pose available.
    """

    marker_id: str
    mode: str = "never_seen"
    world_pose: RigidTransform | None = None
    last_seen: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in TRACKING_MODES:
            raise ValueError(f"mode must be one of {TRACKING_MODES}")
        if self.mode == "never_seen" and self.world_pose is not None:
            raise ValueError("never_seen state cannot carry a pose")
        if self.mode != "never_seen" and self.world_pose is None:
            raise ValueError(f"{self.mode} state requires a pose")


@dataclass(frozen=True)
class PnpSolution:
    pose: RigidTransform
    reprojection_rmse: float


def project_points(
    intrinsics: CameraIntrinsics, pose: RigidTransform, points_3d: np.ndarray
) -> np.ndarray:
    """Pinhole projection of marker-frame points through a camera-frame pose."""
    cam = np.asarray(points_3d, dtype=float) @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return np.column_stack([u, v])


def reprojection_rmse(
    intrinsics: CameraIntrinsics,
    pose: RigidTransform,
    plane_points: np.ndarray,
    pixels: np.ndarray,
) -> float:
    proj = project_points(intrinsics, pose, plane_points)
    return float(np.sqrt(np.mean(np.sum((proj - pixels) ** 2, axis=1))))


def _normalize_2d(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    ph = np.column_stack([p, np.ones(len(p))]) @ T.T
    return ph[:, :2], T


def _homography(plane_xy: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    src, Ts = _normalize_2d(plane_xy)
    dst, Td = _normalize_2d(pixels)
    n = len(src)
    A = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = src[i]
        u, v = dst[i]
        A[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        A[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]
    _, s, vt = np.linalg.svd(A)
    if s[-2] <= 1e-9 * s[0]:
        raise DegenerateConfigurationError("correspondences do not determine a homography")
    H = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    if abs(H[2, 2]) < 1e-15:
        # The marker origin would project to infinity: the marker plane
        # passes through the camera center, so no in-front pose exists.
        raise NoValidPoseError("no finite pose maps the marker plane to these corners")
    return H / H[2, 2]


def _collinear(points_xy: np.ndarray, tol: float = 1e-9) -> bool:
    c = points_xy - points_xy.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    scale = max(float(s[0]), 1.0)
    return float(s[1]) <= tol * scale


def _pose_candidates(H: np.ndarray, intrinsics: CameraIntrinsics) -> list[RigidTransform]:
    K = np.array(
        [[intrinsics.fx, 0.0, intrinsics.cx], [0.0, intrinsics.fy, intrinsics.cy], [0.0, 0.0, 1.0]]
    )
    M = np.linalg.solve(K, H)
    out = []
    for sign in (1.0, -1.0):
        Ms = sign * M
        r1, r2, t = Ms[:, 0], Ms[:, 1], Ms[:, 2]
        scale = np.sqrt(np.linalg.norm(r1) * np.linalg.norm(r2))
        if scale <= 1e-15:
            continue
        r1, r2, t = r1 / scale, r2 / scale, t / scale
        r3 = np.cross(r1, r2)
        try:
            R = geometry.orthonormalize(np.column_stack([r1, r2, r3]))
        except DegenerateConfigurationError:
            continue
        out.append(RigidTransform(R, t))
    if not out:
        raise DegenerateConfigurationError("homography decomposition failed")
    return out


def _refine_gauss_newton(
    intrinsics: CameraIntrinsics,
    pose: RigidTransform,
    plane_points: np.ndarray,
    pixels: np.ndarray,
    max_iterations: int = 20,
    relative_tol: float = 1e-10,
) -> RigidTransform:
    fx, fy = intrinsics.fx, intrinsics.fy
    R = np.array(pose.rotation)
    t = np.array(pose.translation)
    previous_cost = None
    for _ in range(max_iterations):
        cam = plane_points @ R.T + t
        z = cam[:, 2]
        u = fx * cam[:, 0] / z + intrinsics.cx
        v = fy * cam[:, 1] / z + intrinsics.cy
        r = np.concatenate([u - pixels[:, 0], v - pixels[:, 1]])
        cost = 0.5 * float(r @ r)
        if previous_cost is not None and abs(previous_cost - cost) <= relative_tol * max(
            previous_cost, 1e-300
        ):
            break
        previous_cost = cost
        n = len(plane_points)
        J = np.zeros((2 * n, 6))
        for i in range(n):
            X = cam[i]
            # left perturbation: R <- exp(w) R, so d(cam)/dw = -[cam]_x
            Jc = np.zeros((3, 6))
            Jc[:, :3] = -np.array([[0, -X[2], X[1]], [X[2], 0, -X[0]], [-X[1], X[0], 0]])
            Jc[:, 3:] = np.eye(3)
            zi = X[2]
            J[i] = np.array([fx / zi, 0.0, -fx * X[0] / zi**2]) @ Jc
            J[n + i] = np.array([0.0, fy / zi, -fy * X[1] / zi**2]) @ Jc
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        R = geometry.rotation_from_rotvec(step[:3]) @ R
        t = t + step[3:]
    return RigidTransform(geometry.orthonormalize(R), t)


def solve_planar_pnp(
    correspondences: Sequence[tuple[Sequence[float], Sequence[float]]],
    intrinsics: CameraIntrinsics,
) -> PnpSolution:
    """Camera-frame pose of a planar marker from (image px, plane mm) pairs.

    Plane points live in the marker frame with z = 0 (a trailing zero z
    coordinate is accepted). At least four correspondences are required.
    The returned pose places the marker in front of the camera; the
    solution's reprojection root-mean-square error rides along.
    """
    if len(correspondences) < 4:
        raise InsufficientDataError(
            f"planar pose needs at least 4 correspondences, got {len(correspondences)}"
        )
    pixels = np.array([np.asarray(img, dtype=float).reshape(2) for img, _ in correspondences])
    plane = []
    for _, p in correspondences:
        p = np.asarray(p, dtype=float).ravel()
        if p.size == 3:
            if abs(p[2]) > 1e-9:
                raise ValueError("marker-plane points must have z = 0")
            p = p[:2]
        elif p.size != 2:
            raise ValueError("marker-plane points must be 2D (or 3D with z = 0)")
        plane.append(p)
    plane_xy = np.array(plane)
    if _collinear(plane_xy):
        raise DegenerateConfigurationError("marker-plane points are collinear")
    if len(plane_xy) == 4:
        for skip in range(4):
            trio = np.delete(plane_xy, skip, axis=0)
            if _collinear(trio):
                raise DegenerateConfigurationError(
                    "three of four marker-plane points are collinear"
                )
    H = _homography(plane_xy, pixels)
    plane_3d = np.column_stack([plane_xy, np.zeros(len(plane_xy))])
    best: tuple[RigidTransform, float] | None = None
    for cand in _pose_candidates(H, intrinsics):
        if cand.translation[2] <= 0:
            continue
        err = reprojection_rmse(intrinsics, cand, plane_3d, pixels)
        if best is None or err < best[1]:
            best = (cand, err)
    if best is None:
        raise NoValidPoseError("no pose candidate places the marker in front of the camera")
    refined = _refine_gauss_newton(intrinsics, best[0], plane_3d, pixels)
    if refined.translation[2] <= 0:
        raise NoValidPoseError("refined pose places the marker behind the camera")
    return PnpSolution(refined, reprojection_rmse(intrinsics, refined, plane_3d, pixels))


def solve_marker_pnp(
    observation: MarkerObservation, spec: MarkerSpec, intrinsics: CameraIntrinsics
) -> PnpSolution:
    """solve_planar_pnp wired to a marker observation's four corners."""
    if observation.corners_2d is None:
        raise InsufficientDataError("observation carries no corner pixels")
    corners = marker_corners(spec.edge_length)
    pairs = [(observation.corners_2d[i], corners[i, :2]) for i in range(4)]
    return solve_planar_pnp(pairs, intrinsics)


def marker_world_pose(obs_pose: RigidTransform, camera: CameraSample) -> RigidTransform:
    """World pose of a marker: T_world_camera composed with T_camera_marker."""
    return geometry.compose(camera.pose_world, obs_pose)


@dataclass(frozen=True)
class TrackingRegistry:
    """Immutable marker-id -> (spec, state) map plus the last frame time."""

    specs: Mapping[str, MarkerSpec]
    states: Mapping[str, TrackedMarkerState]
    last_time: float | None = None

    @classmethod
    def from_specs(cls, specs: Sequence[MarkerSpec]) -> "TrackingRegistry":
        by_id = {s.id: s for s in specs}
        if len(by_id) != len(specs):
            raise ValueError("marker ids must be unique")
        states = {mid: TrackedMarkerState(marker_id=mid) for mid in by_id}
        return cls(specs=by_id, states=states)

    def state(self, marker_id: str) -> TrackedMarkerState:
        if marker_id not in self.states:
            raise UnregisteredMarkerError(f"marker {marker_id!r} is not registered")
        return self.states[marker_id]


def step_tracking(
    registry: TrackingRegistry,
    frame: Sequence[MarkerObservation],
    camera: CameraSample,
    intrinsics: CameraIntrinsics | None = None,
) -> TrackingRegistry:
    """Advance the state machine by one camera frame.

    Observed markers become 'tracked' with a fresh world pose; markers
    seen before but absent from this frame become 'extended_tracked'
    and keep their last world pose; never-observed markers stay
    'never_seen'. Observations lacking a solved pose_in_camera are
    solved here when intrinsics are provided.
    """
    if registry.last_time is not None and camera.timestamp < registry.last_time:
        raise OutOfOrderError(
            f"frame time {camera.timestamp} precedes {registry.last_time}"
        )
    for obs in frame:
        if obs.marker_id not in registry.specs:
            raise UnregisteredMarkerError(f"marker {obs.marker_id!r} is not registered")
    new_states = dict(registry.states)
    observed = set()
    for obs in frame:
        observed.add(obs.marker_id)
        pose_cam = obs.pose_in_camera
        if pose_cam is None:
            if intrinsics is None:
                raise ValueError(
                    "observation has no pose_in_camera and no intrinsics were provided"
                )
            pose_cam = solve_marker_pnp(obs, registry.specs[obs.marker_id], intrinsics).pose
        world = marker_world_pose(pose_cam, camera)
        new_states[obs.marker_id] = TrackedMarkerState(
            marker_id=obs.marker_id,
            mode="tracked",
            world_pose=world,
            last_seen=camera.timestamp,
        )
    for mid, st in registry.states.items():
        if mid in observed:
            continue
        if st.mode in ("tracked", "extended_tracked"):
            new_states[mid] = replace(st, mode="extended_tracked")
    return TrackingRegistry(specs=registry.specs, states=new_states, last_time=camera.timestamp)
