"""Tool-tip calibration: pivot least squares, divot-based calibrator and
marker-to-marker chains, world-frame tool-tip lookup, and calibration
error measures.

The pivot method rotates a tool about a fixed tip and solves the stacked
linear system [R_i | -I] . [p_m; p_w] = -t_i for the tip offset p_m in
the marker frame and the fixed pivot point p_w in the world frame. It
recovers position only; the stored rotation is identity and the result
is flagged position_only.

The divot-based methods measure, per paired sample,
    tip_in_tool_marker = inv(T_tool_world) . T_owner_world . divot_in_owner
and average over samples: arithmetic-mean translation plus a normalized
mean of sign-aligned quaternions (each aligned to the first sample's
hemisphere). Shaft axis convention: local z of the tip frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import geometry
from .errors import (
    CountMismatchError,
    InsufficientDataError,
    RotationDiversityError,
)
from .geometry import Point3, RigidTransform

CALIBRATION_METHODS = ("pivot", "calibrator", "marker_to_marker", "by_design")

CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class PivotSample:
    """Tool-marker world pose at one time point of a pivot recording."""

    marker_world_pose: RigidTransform
    timestamp: float = 0.0


@dataclass(frozen=True)
class PivotResult:
    """Pivot solve output: tip offset in the marker frame, the fixed
    world-frame pivot point, and the RMS of per-sample residuals."""

    tip_in_marker: Point3
    pivot_in_world: Point3
    rms_residual: float
    sample_count: int

    def __post_init__(self) -> None:
        if self.rms_residual < 0:
            raise ValueError("rms_residual must be non-negative")
        if self.sample_count < 3:
            raise ValueError("pivot result requires at least 3 samples")


@dataclass(frozen=True)
class ToolCalibration:
    """Tip pose in the tool-marker frame plus how it was obtained.

    position_only marks pivot-style results whose rotation is identity
    by construction. rms_residual records the per-sample spread of the
    solution (0 for single-sample and by-design calibrations).
    """

    tool_marker_id: str
    tip_in_marker: RigidTransform
    method: str
    position_only: bool = False
    rms_residual: float = 0.0

    def __post_init__(self) -> None:
        if self.method not in CALIBRATION_METHODS:
            raise ValueError(f"method must be one of {CALIBRATION_METHODS}")
        if self.position_only and not np.allclose(
            self.tip_in_marker.rotation, np.eye(3), atol=1e-9
        ):
            raise ValueError("position_only calibration must carry identity rotation")


@dataclass(frozen=True)
class DivotSpec:
    """A divot point's pose in the frame of the marker that owns it."""

    owner_marker_id: str
    divot_in_marker: RigidTransform


def pivot_calibrate(samples: Sequence[PivotSample], trim: bool = False) -> PivotResult:
    """Least-squares pivot solve over marker world poses.

    trim=True enables a single outlier-rejection pass: samples whose
    residual exceeds 3x the median residual are dropped and the system
    is re-solved once (provided at least three samples survive).
    """
    if len(samples) < 3:
        raise InsufficientDataError(f"pivot needs at least 3 samples, got {len(samples)}")
    result = _pivot_solve(samples)
    if not trim:
        return result
    residuals = _pivot_residuals(samples, result)
    median = float(np.median(residuals))
    if median <= 0:
        return result
    kept = [s for s, r in zip(samples, residuals) if r <= 3.0 * median]
    if len(kept) < 3 or len(kept) == len(samples):
        return result
    return _pivot_solve(kept)


def _pivot_solve(samples: Sequence[PivotSample]) -> PivotResult:
    n = len(samples)
    A = np.zeros((3 * n, 6))
    b = np.zeros(3 * n)
    for i, s in enumerate(samples):
        A[3 * i : 3 * i + 3, :3] = s.marker_world_pose.rotation
        A[3 * i : 3 * i + 3, 3:] = -np.eye(3)
        b[3 * i : 3 * i + 3] = -s.marker_world_pose.translation
    condition = float(np.linalg.cond(A))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise RotationDiversityError(
            f"pivot samples lack rotational diversity (condition number {condition:.3e})"
        )
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    tip = Point3.of(x[:3])
    pivot = Point3.of(x[3:])
    result = PivotResult(tip, pivot, 0.0, n)
    rms = float(np.sqrt(np.mean(_pivot_residuals(samples, result) ** 2)))
    return PivotResult(tip, pivot, rms, n)


def _pivot_residuals(samples: Sequence[PivotSample], result: PivotResult) -> np.ndarray:
    tip = np.asarray(result.tip_in_marker)
    pivot = np.asarray(result.pivot_in_world)
    out = np.empty(len(samples))
    for i, s in enumerate(samples):
        pose = s.marker_world_pose
        out[i] = np.linalg.norm(pose.rotation @ tip + pose.translation - pivot)
    return out


def average_transforms(transforms: Sequence[RigidTransform]) -> RigidTransform:
    """Mean pose: arithmetic-mean translation; rotation from the normalized
    mean of quaternions sign-aligned to the first sample's hemisphere.
    Adequate for small angular spreads."""
    if not transforms:
        raise InsufficientDataError("cannot average zero transforms")
    translations = np.array([t.translation for t in transforms])
    quats = [geometry.quaternion_from_rotation(t.rotation).array for t in transforms]
    reference = quats[0]
    aligned = [q if float(q @ reference) >= 0 else -q for q in quats]
    mean_q = np.mean(aligned, axis=0)
    norm = float(np.linalg.norm(mean_q))
    if norm < 1e-12:
        raise ValueError("quaternion mean degenerate (antipodal rotations)")
    mean_q = mean_q / norm
    rotation = geometry.rotation_from_quaternion(
        geometry.UnitQuaternion(*mean_q)
    )
    return RigidTransform(rotation, translations.mean(axis=0))


def _relative_chain(
    tool_world: RigidTransform, owner_world: RigidTransform, divot_in_owner: RigidTransform
) -> RigidTransform:
    return geometry.compose(
        geometry.invert(tool_world), geometry.compose(owner_world, divot_in_owner)
    )


def _divot_calibration(
    samples: Sequence[tuple[RigidTransform, RigidTransform]],
    divot: DivotSpec,
    method: str,
    tool_marker_id: str,
) -> ToolCalibration:
    if len(samples) < 1:
        raise InsufficientDataError("divot calibration needs at least one sample pair")
    per_sample = [
        _relative_chain(tool_world, owner_world, divot.divot_in_marker)
        for tool_world, owner_world in samples
    ]
    mean = per_sample[0] if len(per_sample) == 1 else average_transforms(per_sample)
    spread = np.array([t.translation - mean.translation for t in per_sample])
    rms = float(np.sqrt(np.mean(np.sum(spread**2, axis=1)))) if len(per_sample) > 1 else 0.0
    return ToolCalibration(
        tool_marker_id=tool_marker_id,
        tip_in_marker=mean,
        method=method,
        rms_residual=rms,
    )


def calibrate_with_calibrator(
    samples: Sequence[tuple[RigidTransform, RigidTransform]],
    hole: DivotSpec,
    tool_marker_id: str = "tool",
) -> ToolCalibration:
    """Tip pose from paired (tool marker, calibrator marker) world poses
    with the tool tip seated in the calibrator's divot hole."""
    return _divot_calibration(samples, hole, "calibrator", tool_marker_id)


def calibrate_marker_to_marker(
    samples: Sequence[tuple[RigidTransform, RigidTransform]],
    divot: DivotSpec,
    tool_marker_id: str = "tool",
) -> ToolCalibration:
    """Tip pose from paired (tool marker, reference marker) world poses
    with the tool tip seated on a reference-marker divot."""
    return _divot_calibration(samples, divot, "marker_to_marker", tool_marker_id)


def tooltip_world(marker_world: RigidTransform, calib: ToolCalibration) -> RigidTransform:
    """Tool-tip pose in world coordinates: marker world pose composed with
    the calibrated tip offset."""
    return geometry.compose(marker_world, calib.tip_in_marker)


def calibration_pose_error(
    estimated: ToolCalibration, ground_truth: ToolCalibration
) -> tuple[float, float]:
    """(tip distance in mm, shaft-axis angle in degrees) between two
    calibrations of the same tool marker. The shaft axis is the local z
    of the tip frame; the angle is 0 when either side is position_only."""
    if estimated.tool_marker_id != ground_truth.tool_marker_id:
        raise CountMismatchError(
            f"calibrations reference different markers: "
            f"{estimated.tool_marker_id!r} vs {ground_truth.tool_marker_id!r}"
        )
    tip_distance = float(
        np.linalg.norm(estimated.tip_in_marker.translation - ground_truth.tip_in_marker.translation)
    )
    if estimated.position_only or ground_truth.position_only:
        return tip_distance, 0.0
    za = estimated.tip_in_marker.rotation[:, 2]
    zb = ground_truth.tip_in_marker.rotation[:, 2]
    angle = float(np.degrees(np.arccos(np.clip(float(za @ zb), -1.0, 1.0))))
    return tip_distance, angle
