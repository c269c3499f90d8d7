"""Exception types raised by the navigation toolkit.

Every failure mode that callers are expected to distinguish gets its own
class so tests and CLI exit-code mapping can match on type, never on
message text.
"""

from __future__ import annotations


class NavkitError(Exception):
    """Base class for all toolkit errors."""


class InsufficientDataError(NavkitError):
    """Too few samples or points to solve the requested problem."""


class DegenerateConfigurationError(NavkitError):
    """Input geometry leaves the solution underdetermined (collinear
    points, rank-deficient matrix, coincident correspondences)."""


class RotationDiversityError(DegenerateConfigurationError):
    """Pivot samples do not span enough orientations: the stacked system
    is ill-conditioned and the tip offset cannot be separated from the
    pivot point."""


class NoValidPoseError(NavkitError):
    """No pose candidate places the marker in front of the camera."""


class NotVisibleError(NavkitError):
    """Requested synthetic observation of a marker behind the camera."""


class UnregisteredMarkerError(NavkitError):
    """Observation references a marker id absent from the registry."""


class OutOfOrderError(NavkitError):
    """Timestamp regression in a stream or tracking step."""


class ConfigError(NavkitError):
    """Base class for configuration validation failures."""


class ConfigSchemaError(ConfigError):
    """Missing required field or unknown key; message names the field."""


class DuplicateIdError(ConfigError):
    """Marker or tool identifier declared more than once."""


class DanglingReferenceError(ConfigError):
    """Config entry references an undeclared marker or file."""


class UnknownFrameError(NavkitError):
    """Frame id not present in the frame graph."""


class NoPathError(NavkitError):
    """Frames live in disconnected components of the frame graph."""


class CycleError(NavkitError):
    """Edge insertion would create a cycle (or a redundant second path)."""


class RecordParseError(NavkitError):
    """Malformed record line; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnknownMetricError(NavkitError):
    """Monte-Carlo runner was asked for a metric name it does not know."""


class CountMismatchError(NavkitError):
    """Paired point lists (or calibrations) of unequal length/identity."""
