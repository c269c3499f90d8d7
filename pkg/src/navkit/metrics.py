"""Accuracy metrics: fiducial and target registration error, trajectory
deviation, surface-point deviation, insertion error against a planned
trajectory, and incision-line deviation.

RMS accumulations run as plain sequential loops so results match a naive
accumulation oracle bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CountMismatchError, InsufficientDataError
from .geometry import Point3, RigidTransform, as_point_array, transform_points


@dataclass(frozen=True)
class Trajectory:
    """A planned or measured entry -> exit line segment."""

    entry: Point3
    exit: Point3
    label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "entry", Point3.of(self.entry))
        object.__setattr__(self, "exit", Point3.of(self.exit))
        if np.array_equal(np.asarray(self.entry), np.asarray(self.exit)):
            raise ValueError("trajectory entry and exit must differ")

    @property
    def direction(self) -> np.ndarray:
        d = np.asarray(self.exit) - np.asarray(self.entry)
        return d / np.linalg.norm(d)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.asarray(self.exit) - np.asarray(self.entry)))


@dataclass(frozen=True)
class ToolLine:
    """The infinite line of a tool shaft: tip point plus unit direction.
    A non-unit direction is normalized; a zero direction is rejected."""

    tip: Point3
    direction: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "tip", Point3.of(self.tip))
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = float(np.linalg.norm(d))
        if n == 0 or not np.all(np.isfinite(d)):
            raise ValueError("tool direction must be a finite nonzero vector")
        d = d / n
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Polyline:
    """An ordered chain of at least two points; consecutive points distinct."""

    points: tuple
    label: str = ""

    def __post_init__(self) -> None:
        pts = tuple(Point3.of(p) for p in self.points)
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        for a, b in zip(pts, pts[1:]):
            if np.array_equal(np.asarray(a), np.asarray(b)):
                raise ValueError("consecutive polyline points must be distinct")
        object.__setattr__(self, "points", pts)

    @property
    def array(self) -> np.ndarray:
        return as_point_array(self.points)


def _rms(residuals: Sequence[float]) -> float:
    total = 0.0
    for r in residuals:
        total += r * r
    return math.sqrt(total / len(residuals))


def _paired_residuals(
    model_points, patient_points, transform: RigidTransform
) -> list[float]:
    model = as_point_array(model_points)
    patient = as_point_array(patient_points)
    if len(model) != len(patient):
        raise CountMismatchError(
            f"point counts differ: {len(model)} model vs {len(patient)} patient"
        )
    if len(model) == 0:
        raise InsufficientDataError("need at least one point pair")
    mapped = transform_points(transform, model)
    out = []
    for i in range(len(model)):
        d = patient[i] - mapped[i]
        out.append(math.sqrt(float(np.dot(d, d))))
    return out


def fre(model_points, patient_points, transform: RigidTransform) -> float:
    """Fiducial registration error: root-mean-square residual of the
    points that produced the registration transform."""
    return _rms(_paired_residuals(model_points, patient_points, transform))


def tre(heldout_model, heldout_patient, transform: RigidTransform) -> float:
    """Target registration error: same RMS formula evaluated on points the
    caller guarantees were excluded from the registration solve (the
    library cannot verify the exclusion). Supplying patient-side points in
    a reference-marker coordinate system gives the marker-relative
    variant."""
    return _rms(_paired_residuals(heldout_model, heldout_patient, transform))


def trajectory_deviation(a: Trajectory, b: Trajectory) -> tuple[float, float]:
    """(distance mm, angle degrees): distance is the mean of the two
    endpoint distances; angle is between the normalized directions."""
    d_entry = float(np.linalg.norm(np.asarray(a.entry) - np.asarray(b.entry)))
    d_exit = float(np.linalg.norm(np.asarray(a.exit) - np.asarray(b.exit)))
    cos = float(np.clip(a.direction @ b.direction, -1.0, 1.0))
    return (d_entry + d_exit) / 2.0, float(np.degrees(np.arccos(cos)))


def surface_deviation(
    points, t1: RigidTransform, t2: RigidTransform
) -> tuple[float, float, list[float]]:
    """Per-point distance between the two mappings of the same surface
    points; returns (mean, max, per-point distances)."""
    pts = as_point_array(points)
    if len(pts) == 0:
        raise InsufficientDataError("surface deviation needs at least one point")
    a = transform_points(t1, pts)
    b = transform_points(t2, pts)
    per_point = [float(np.linalg.norm(a[i] - b[i])) for i in range(len(pts))]
    return float(np.mean(per_point)), float(np.max(per_point)), per_point


def _distance_to_line(p: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> float:
    rel = p - origin
    return float(np.linalg.norm(rel - (rel @ direction) * direction))


def insertion_error(
    tool: ToolLine, planned: Trajectory, samples: int = 100
) -> tuple[float, float, float, float]:
    """(entry mm, exit mm, mean mm, angle degrees).

    entry/exit are perpendicular distances from the planned endpoints to
    the infinite tool line (the physical shaft extends through the
    target); mean averages the perpendicular distance over `samples`
    equally spaced points from entry to exit inclusive."""
    if samples < 2:
        raise ValueError("insertion error needs at least 2 sample points")
    tip = np.asarray(tool.tip)
    d = tool.direction
    entry = np.asarray(planned.entry)
    exit_ = np.asarray(planned.exit)
    e_entry = _distance_to_line(entry, tip, d)
    e_exit = _distance_to_line(exit_, tip, d)
    total = 0.0
    for k in range(samples):
        u = k / (samples - 1)
        total += _distance_to_line(entry + u * (exit_ - entry), tip, d)
    cos = float(np.clip(d @ planned.direction, -1.0, 1.0))
    return e_entry, e_exit, total / samples, float(np.degrees(np.arccos(cos)))


def _point_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    u = float((p - a) @ ab) / denom if denom > 0 else 0.0
    u = min(1.0, max(0.0, u))
    return float(np.linalg.norm(p - (a + u * ab)))


def _point_to_polyline(p: np.ndarray, poly: np.ndarray) -> float:
    best = math.inf
    for i in range(len(poly) - 1):
        best = min(best, _point_to_segment(p, poly[i], poly[i + 1]))
    return best


def _polyline_arc_points(poly: np.ndarray, samples: int) -> np.ndarray:
    seg = np.diff(poly, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    out = np.empty((samples, 3))
    for k in range(samples):
        s = total * k / (samples - 1)
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(seg_len) - 1)
        u = (s - cum[i]) / seg_len[i]
        out[k] = poly[i] + u * seg[i]
    return out


def incision_deviation(drawn: Polyline, planned: Polyline, samples: int = 100) -> float:
    """Directed mean distance drawn -> planned: average, over `samples`
    arc-length-equally-spaced points along the drawn line, of the closest
    distance to the planned polyline. Directed because a drawn incision
    may legitimately be shorter than the planned one."""
    if samples < 2:
        raise ValueError("incision deviation needs at least 2 sample points")
    drawn_pts = _polyline_arc_points(drawn.array, samples)
    planned_arr = planned.array
    total = 0.0
    for k in range(samples):
        total += _point_to_polyline(drawn_pts[k], planned_arr)
    return total / samples
