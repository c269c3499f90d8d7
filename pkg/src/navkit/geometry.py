"""Rigid-transform algebra: composition, inversion, point mapping,
rotation distance, re-orthonormalization, and quaternion conversion.

Conventions
-----------
Rotations are stored as 3x3 orthonormal matrices; quaternions appear only
at serialization and averaging boundaries. Units at API boundaries are
millimeters and degrees. The text form of a pose is seven ASCII decimals
"tx ty tz qx qy qz qw" (scalar-last quaternion), space separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DegenerateConfigurationError

_ORTHO_KEEP_TOL = 1e-9
_ORTHO_FIX_TOL = 1e-6


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Point3:
    """A point in 3-space, millimeters. Coordinates must be finite."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"Point3.{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, p: "Point3 | Sequence[float] | np.ndarray") -> "Point3":
        if isinstance(p, Point3):
            return p
        arr = np.asarray(p, dtype=float).reshape(3)
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        a = self.array
        return a.astype(dtype) if dtype is not None else a

    def __iter__(self) -> Iterator[float]:
        return iter((self.x, self.y, self.z))

    def __len__(self) -> int:
        return 3

    def __getitem__(self, i: int) -> float:
        return (self.x, self.y, self.z)[i]


def as_point_array(points: Iterable) -> np.ndarray:
    """Coerce an iterable of Point3 / sequences into an (N, 3) float array."""
    rows = [np.asarray(p, dtype=float).reshape(3) for p in points]
    if not rows:
        return np.empty((0, 3))
    return np.vstack(rows)


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion, scalar-first fields (w, x, y, z).

    Serialization uses scalar-last ordering; see format_pose.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        if not np.all(np.isfinite(q)):
            raise ValueError("quaternion components must be finite")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > _ORTHO_FIX_TOL:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if abs(n - 1.0) > _ORTHO_KEEP_TOL:
            q = q / n
        for name, v in zip("wxyz", q):
            object.__setattr__(self, name, float(v))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) element: 3x3 rotation (orthonormal, det +1) plus a 3-vector
    translation in millimeters.

    The constructor accepts rotations with orthonormality drift up to 1e-6
    (re-orthonormalizing when drift exceeds 1e-9) and rejects anything
    worse. Instances are immutable; the stored arrays are read-only.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform components must be finite")
        drift = float(np.max(np.abs(R.T @ R - np.eye(3))))
        det = float(np.linalg.det(R))
        if drift > _ORTHO_FIX_TOL or det <= 0:
            raise ValueError(
                f"rotation not orthonormal (drift {drift:.3e}, det {det:.6f})"
            )
        if drift > _ORTHO_KEEP_TOL or abs(det - 1.0) > _ORTHO_KEEP_TOL:
            R = orthonormalize(R)
        object.__setattr__(self, "rotation", _as_readonly(R))
        object.__setattr__(self, "translation", _as_readonly(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(
        cls, q: UnitQuaternion, translation: Sequence[float] | np.ndarray
    ) -> "RigidTransform":
        t = cls(rotation_from_quaternion(q), np.asarray(translation, dtype=float))
        # Remember the exact source quaternion so text serialization of a
        # parsed pose reproduces its input bytes (matrix->quaternion loses
        # the last ulp otherwise).
        object.__setattr__(t, "_source_quaternion", q)
        return t


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a applied to b's frame: rotation Ra.Rb, translation Ra.tb + ta."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform: (R, t) -> (R^T, -R^T t)."""
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def transform_point(t: RigidTransform, p: "Point3 | Sequence[float] | np.ndarray") -> Point3:
    """Map a point: R.p + translation."""
    arr = np.asarray(Point3.of(p))
    return Point3.of(t.rotation @ arr + t.translation)


def transform_points(t: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Vectorized transform_point for an (N, 3) array."""
    pts = np.asarray(points, dtype=float)
    return pts @ t.rotation.T + t.translation


def rotation_angle_between(a: RigidTransform, b: RigidTransform) -> float:
    """Angle in degrees of Ra^T Rb, via arccos((trace - 1) / 2), in [0, 180]."""
    rel = a.rotation.T @ b.rotation
    c = (np.trace(rel) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation in Frobenius norm: SVD with determinant correction.

    Raises DegenerateConfigurationError when the input is rank-deficient.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got {m.shape}")
    u, s, vt = np.linalg.svd(m)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise DegenerateConfigurationError("matrix is rank-deficient")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_about_axis(axis: Sequence[float] | np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotation matrix about an arbitrary axis (Rodrigues), angle in degrees."""
    a = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("rotation axis must be nonzero")
    a = a / n
    ang = np.radians(angle_deg)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * (k @ k)


def rotation_from_rotvec(r: Sequence[float] | np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (axis * angle, radians)."""
    r = np.asarray(r, dtype=float).reshape(3)
    ang = float(np.linalg.norm(r))
    if ang < 1e-300:
        return np.eye(3)
    return rotation_about_axis(r, np.degrees(ang))


def quaternion_from_rotation(m: np.ndarray) -> UnitQuaternion:
    """Rotation matrix -> unit quaternion (w >= 0 hemisphere not enforced)."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    q = q / np.linalg.norm(q)
    return UnitQuaternion(*q)


def rotation_from_quaternion(q: UnitQuaternion) -> np.ndarray:
    """Unit quaternion -> rotation matrix."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def format_float(v: float) -> str:
    """Shortest decimal that round-trips to the same float; whole numbers
    drop the trailing '.0' so the identity pose prints as '0 0 0 0 0 0 1'."""
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def format_pose(t: RigidTransform) -> str:
    """Seven ASCII decimals 'tx ty tz qx qy qz qw'."""
    q = getattr(t, "_source_quaternion", None)
    if q is None:
        q = quaternion_from_rotation(t.rotation)
    vals = [t.translation[0], t.translation[1], t.translation[2], q.x, q.y, q.z, q.w]
    return " ".join(format_float(v) for v in vals)


def parse_pose(tokens: Sequence[str]) -> RigidTransform:
    """Inverse of format_pose; accepts exactly seven numeric tokens."""
    if len(tokens) != 7:
        raise ValueError(f"pose requires 7 values, got {len(tokens)}")
    vals = [float(tok) for tok in tokens]
    q = UnitQuaternion(vals[6], vals[3], vals[4], vals[5])
    return RigidTransform.from_quaternion(q, vals[:3])
