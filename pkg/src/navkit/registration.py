"""Image-to-patient alignment: point-based rigid registration via the
centroid + covariance-SVD closed form, and manual pose adjustments.

Correspondence is by index order; no automatic matching. Collinear point
sets raise instead of returning an arbitrary rotation: navigation must
never silently use an alignment with an unconstrained degree of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import metrics
from .errors import (
    DegenerateConfigurationError,
    DuplicateIdError,
    InsufficientDataError,
)
from .geometry import (
    Point3,
    RigidTransform,
    as_point_array,
    compose,
    rotation_about_axis,
    transform_points,
)

LANDMARK_FRAMES = ("image", "patient")

ADJUSTMENT_KINDS = ("translate_axis", "rotate_axis", "free_6dof")


@dataclass(frozen=True)
class Landmark:
    label: str
    point: Point3
    frame: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", Point3.of(self.point))
        if self.frame not in LANDMARK_FRAMES:
            raise ValueError(f"frame must be one of {LANDMARK_FRAMES}, got {self.frame!r}")


@dataclass(frozen=True)
class LandmarkSet:
    """Labeled points tagged with the frame they were annotated in.
    Labels are unique within a frame tag; the same label appearing in
    both frames expresses a correspondence."""

    landmarks: tuple

    def __post_init__(self) -> None:
        lms = tuple(self.landmarks)
        if not lms:
            raise InsufficientDataError("landmark set needs at least one point")
        seen = set()
        for lm in lms:
            key = (lm.label, lm.frame)
            if key in seen:
                raise DuplicateIdError(f"duplicate landmark {lm.label!r} in frame {lm.frame!r}")
            seen.add(key)
        object.__setattr__(self, "landmarks", lms)

    def in_frame(self, frame: str) -> dict[str, Point3]:
        return {lm.label: lm.point for lm in self.landmarks if lm.frame == frame}

    def matched_pairs(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        """Labels present in both frames, in image-entry appearance order,
        with the matched (N, 3) image and patient point arrays."""
        patient = self.in_frame("patient")
        labels = [
            lm.label for lm in self.landmarks if lm.frame == "image" and lm.label in patient
        ]
        image_pts = as_point_array(self.in_frame("image")[lab] for lab in labels)
        patient_pts = as_point_array(patient[lab] for lab in labels)
        return labels, image_pts, patient_pts


@dataclass(frozen=True)
class RegistrationResult:
    """Point-based registration output: the image-to-world transform, the
    fiducial registration error, and per-fiducial residuals."""

    image_to_world: RigidTransform
    fre: float
    per_fiducial_residuals: tuple
    point_count: int

    def __post_init__(self) -> None:
        if self.point_count < 3:
            raise ValueError("registration requires at least 3 points")
        object.__setattr__(
            self, "per_fiducial_residuals", tuple(float(r) for r in self.per_fiducial_residuals)
        )


def point_based_register(model_points, patient_points) -> RegistrationResult:
    """Rigid transform minimizing mean squared distance between matched
    point sets: centroid subtraction, covariance SVD, determinant-corrected
    rotation. Raises on fewer than three pairs or a collinear layout."""
    model = as_point_array(model_points)
    patient = as_point_array(patient_points)
    if len(model) != len(patient):
        raise InsufficientDataError(
            f"matched point counts differ: {len(model)} vs {len(patient)}"
        )
    if len(model) < 3:
        raise InsufficientDataError(f"registration needs at least 3 points, got {len(model)}")
    model_centroid = model.mean(axis=0)
    patient_centroid = patient.mean(axis=0)
    covariance = (model - model_centroid).T @ (patient - patient_centroid)
    u, s, vt = np.linalg.svd(covariance)
    if s[1] <= 1e-9 * max(float(s[0]), 1e-300):
        raise DegenerateConfigurationError(
            "point sets are collinear: rotation about the line is unconstrained"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = patient_centroid - rotation @ model_centroid
    transform = RigidTransform(rotation, translation)
    mapped = transform_points(transform, model)
    residuals = tuple(
        float(np.sqrt(np.dot(patient[i] - mapped[i], patient[i] - mapped[i])))
        for i in range(len(model))
    )
    return RegistrationResult(
        image_to_world=transform,
        fre=metrics.fre(model, patient, transform),
        per_fiducial_residuals=residuals,
        point_count=len(model),
    )


@dataclass(frozen=True)
class ManualAdjustment:
    """A single manual alignment nudge.

    translate_axis: shift `delta` mm along `axis` (world frame).
    rotate_axis: rotate `delta` degrees about `axis` through `pivot`
    (world frame); when pivot is None the transformed model centroid is
    used, which requires model points at application time.
    free_6dof: pre-compose `delta_transform` as-is.
    """

    kind: str
    axis: np.ndarray | None = None
    delta: float = 0.0
    pivot: Point3 | None = None
    delta_transform: RigidTransform | None = None

    def __post_init__(self) -> None:
        if self.kind not in ADJUSTMENT_KINDS:
            raise ValueError(f"kind must be one of {ADJUSTMENT_KINDS}")
        if self.kind in ("translate_axis", "rotate_axis"):
            if self.axis is None:
                raise ValueError(f"{self.kind} requires an axis")
            a = np.asarray(self.axis, dtype=float).reshape(3)
            if abs(float(np.linalg.norm(a)) - 1.0) > 1e-9:
                raise ValueError("adjustment axis must be unit length")
            if not np.isfinite(self.delta):
                raise ValueError("delta must be finite")
            a.setflags(write=False)
            object.__setattr__(self, "axis", a)
        if self.pivot is not None:
            object.__setattr__(self, "pivot", Point3.of(self.pivot))
        if self.kind == "free_6dof" and self.delta_transform is None:
            raise ValueError("free_6dof requires a delta transform")


def apply_manual_adjustment(
    current: RigidTransform, adj: ManualAdjustment, model_points=None
) -> RigidTransform:
    """Apply one manual adjustment to the current image-to-world pose."""
    if adj.kind == "translate_axis":
        return RigidTransform(current.rotation, current.translation + adj.delta * adj.axis)
    if adj.kind == "free_6dof":
        return compose(adj.delta_transform, current)
    # rotate_axis: world-frame rotation about the axis through the pivot
    if adj.pivot is not None:
        pivot = np.asarray(adj.pivot)
    else:
        if model_points is None:
            raise ValueError(
                "rotate_axis without an explicit pivot needs model points "
                "(default pivot is the transformed model centroid)"
            )
        pts = as_point_array(model_points)
        if len(pts) == 0:
            raise ValueError("cannot derive default pivot from zero model points")
        pivot = transform_points(current, pts).mean(axis=0)
    rot = rotation_about_axis(adj.axis, adj.delta)
    spin = RigidTransform(rot, pivot - rot @ pivot)
    return compose(spin, current)
