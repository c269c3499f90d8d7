"""Session layer: JSON configuration, the coordinate-frame graph, and the
line-oriented ASCII recording format with deterministic replay.

Recording grammar (LF newlines, '.' decimal separator, '#' starts a
comment line):

    CAM  <timestamp> <tx ty tz qx qy qz qw>
    OBS  <timestamp> <marker_id> <x1 y1 x2 y2 x3 y3 x4 y4>
    CAL  <tool_marker_id> <method> <tx ty tz qx qy qz qw> <rms>
    REG  <tx ty tz qx qy qz qw> <fre> <point_count>
    LM   <label> <image|patient> <x> <y> <z>
    TRAJ <label> <entry x y z> <exit x y z>
    PL   <label>            (followed by one "<x> <y> <z>" line per point)

Timestamps print with 6 fractional digits and are quantized to that
resolution when a record is constructed; all other numbers use the
shortest round-trip decimal, so format -> parse -> format is stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .calibration import CALIBRATION_METHODS, DivotSpec, ToolCalibration
from .errors import (
    ConfigSchemaError,
    CycleError,
    DanglingReferenceError,
    DuplicateIdError,
    NoPathError,
    OutOfOrderError,
    RecordParseError,
    UnknownFrameError,
)
from .geometry import (
    Point3,
    RigidTransform,
    compose,
    format_float,
    format_pose,
    invert,
    parse_pose,
)
from .metrics import Polyline, Trajectory
from .registration import LANDMARK_FRAMES, Landmark, LandmarkSet
from .simulator import NoiseModel
from .tracking import (
    CameraIntrinsics,
    CameraSample,
    MarkerObservation,
    MarkerSpec,
    TrackingRegistry,
    step_tracking,
)

# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class NamedDivot:
    """A registered divot: an id plus the hole pose in its owner marker."""

    id: str
    owner_marker_id: str
    divot_in_marker: RigidTransform

    def __post_init__(self) -> None:
        if not self.id or any(c.isspace() for c in self.id):
            raise ValueError("divot id must be non-empty without whitespace")

    @property
    def spec(self) -> DivotSpec:
        return DivotSpec(
            owner_marker_id=self.owner_marker_id, divot_in_marker=self.divot_in_marker
        )


@dataclass(frozen=True)
class SimulationSettings:
    """Timing and noise knobs for synthetic sessions."""

    frame_rate: float = 30.0
    duration: float = 40.0
    cone_half_angle_deg: float = 30.0
    calibration_duration: float = 6.0
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self) -> None:
        if self.frame_rate <= 0 or self.duration <= 0 or self.calibration_duration <= 0:
            raise ValueError("simulation timing values must be positive")
        if not 0.0 < self.cone_half_angle_deg < 90.0:
            raise ValueError("cone_half_angle_deg must lie in (0, 90)")


@dataclass(frozen=True)
class NavConfig:
    """Validated session configuration: marker inventory, tool calibrations,
    landmark truth, divot registry, optional camera model, and simulation
    settings. Cross-references are checked at construction."""

    markers: tuple = ()
    tools: tuple = ()
    landmarks: tuple = ()
    divots: tuple = ()
    camera: CameraIntrinsics | None = None
    simulation: SimulationSettings = field(default_factory=SimulationSettings)

    def __post_init__(self) -> None:
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(self, "tools", tuple(self.tools))
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        object.__setattr__(self, "divots", tuple(self.divots))
        marker_ids = [m.id for m in self.markers]
        for mid in marker_ids:
            if marker_ids.count(mid) > 1:
                raise DuplicateIdError(f"duplicate marker id {mid!r}")
        tool_ids = [t.tool_marker_id for t in self.tools]
        for tid in tool_ids:
            if tool_ids.count(tid) > 1:
                raise DuplicateIdError(f"duplicate tool calibration for marker {tid!r}")
            if tid not in marker_ids:
                raise DanglingReferenceError(
                    f"tool calibration references unknown marker {tid!r}"
                )
        divot_ids = [d.id for d in self.divots]
        for d in self.divots:
            if divot_ids.count(d.id) > 1:
                raise DuplicateIdError(f"duplicate divot id {d.id!r}")
            if d.owner_marker_id not in marker_ids:
                raise DanglingReferenceError(
                    f"divot {d.id!r} references unknown marker {d.owner_marker_id!r}"
                )
        keys = [(lm.label, lm.frame) for lm in self.landmarks]
        for key in keys:
            if keys.count(key) > 1:
                raise DuplicateIdError(
                    f"duplicate landmark {key[0]!r} in frame {key[1]!r}"
                )

    def marker(self, marker_id: str) -> MarkerSpec:
        for m in self.markers:
            if m.id == marker_id:
                return m
        raise KeyError(f"config has no marker {marker_id!r}")

    def markers_with_role(self, role: str) -> tuple:
        return tuple(m for m in self.markers if m.role == role)

    def tool_for(self, marker_id: str) -> ToolCalibration:
        for t in self.tools:
            if t.tool_marker_id == marker_id:
                return t
        raise KeyError(f"config has no tool calibration for marker {marker_id!r}")

    def divot(self, divot_id: str) -> NamedDivot:
        for d in self.divots:
            if d.id == divot_id:
                return d
        raise KeyError(f"config has no divot {divot_id!r}")

    def landmark_set(self) -> LandmarkSet:
        return LandmarkSet(self.landmarks)


def _check_keys(entry: dict, allowed: set, required: set, context: str) -> None:
    for key in entry:
        if key not in allowed:
            raise ConfigSchemaError(f"unknown key {key!r} in {context}")
    for key in required:
        if key not in entry:
            raise ConfigSchemaError(f"missing key {key!r} in {context}")


def _pose_from_values(values, context: str) -> RigidTransform:
    if not isinstance(values, (list, tuple)) or len(values) != 7:
        raise ConfigSchemaError(f"{context} must be a list of 7 numbers")
    try:
        return parse_pose([format_float(float(v)) for v in values])
    except (TypeError, ValueError) as exc:
        raise ConfigSchemaError(f"invalid pose in {context}: {exc}") from exc


def _pose_to_values(pose: RigidTransform) -> list:
    return [float(tok) for tok in format_pose(pose).split()]


def _point_from_values(values, context: str) -> Point3:
    if not isinstance(values, (list, tuple)) or len(values) != 3:
        raise ConfigSchemaError(f"{context} must be a list of 3 numbers")
    try:
        return Point3(float(values[0]), float(values[1]), float(values[2]))
    except (TypeError, ValueError) as exc:
        raise ConfigSchemaError(f"invalid point in {context}: {exc}") from exc


def config_from_json(text: str) -> NavConfig:
    """Parse and validate a JSON configuration document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigSchemaError("configuration root must be an object")
    _check_keys(
        data,
        {"markers", "tools", "landmarks", "divots", "camera", "simulation"},
        set(),
        "configuration",
    )

    markers = []
    for i, entry in enumerate(_section(data, "markers")):
        ctx = f"markers[{i}]"
        _check_keys(entry, {"id", "family", "edge_length", "role"}, {"id", "edge_length"}, ctx)
        try:
            markers.append(
                MarkerSpec(
                    id=str(entry["id"]),
                    family=str(entry.get("family", "square")),
                    edge_length=float(entry["edge_length"]),
                    role=str(entry.get("role", "reference")),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigSchemaError(f"invalid {ctx}: {exc}") from exc

    tools = []
    for i, entry in enumerate(_section(data, "tools")):
        ctx = f"tools[{i}]"
        _check_keys(
            entry,
            {"marker_id", "tip", "pose", "method", "position_only", "rms_residual"},
            {"marker_id"},
            ctx,
        )
        if ("tip" in entry) == ("pose" in entry):
            raise ConfigSchemaError(f"{ctx} needs exactly one of 'tip' or 'pose'")
        if "tip" in entry:
            tip_point = _point_from_values(entry["tip"], f"{ctx}.tip")
            pose = RigidTransform(np.eye(3), tip_point.array)
            position_only = bool(entry.get("position_only", True))
        else:
            pose = _pose_from_values(entry["pose"], f"{ctx}.pose")
            position_only = bool(entry.get("position_only", False))
        try:
            tools.append(
                ToolCalibration(
                    tool_marker_id=str(entry["marker_id"]),
                    tip_in_marker=pose,
                    method=str(entry.get("method", "by_design")),
                    position_only=position_only,
                    rms_residual=float(entry.get("rms_residual", 0.0)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigSchemaError(f"invalid {ctx}: {exc}") from exc

    landmarks = []
    for i, entry in enumerate(_section(data, "landmarks")):
        ctx = f"landmarks[{i}]"
        _check_keys(entry, {"label", "frame", "point"}, {"label", "frame", "point"}, ctx)
        frame = str(entry["frame"])
        if frame not in LANDMARK_FRAMES:
            raise ConfigSchemaError(
                f"{ctx}.frame must be one of {', '.join(LANDMARK_FRAMES)}"
            )
        landmarks.append(
            Landmark(
                label=str(entry["label"]),
                point=_point_from_values(entry["point"], f"{ctx}.point"),
                frame=frame,
            )
        )

    divots = []
    for i, entry in enumerate(_section(data, "divots")):
        ctx = f"divots[{i}]"
        _check_keys(entry, {"id", "owner", "pose"}, {"id", "owner", "pose"}, ctx)
        divots.append(
            NamedDivot(
                id=str(entry["id"]),
                owner_marker_id=str(entry["owner"]),
                divot_in_marker=_pose_from_values(entry["pose"], f"{ctx}.pose"),
            )
        )

    camera = None
    if "camera" in data:
        entry = data["camera"]
        if not isinstance(entry, dict):
            raise ConfigSchemaError("camera section must be an object")
        _check_keys(
            entry,
            {"fx", "fy", "cx", "cy", "image_width", "image_height"},
            {"fx", "fy", "cx", "cy"},
            "camera",
        )
        width = entry.get("image_width")
        height = entry.get("image_height")
        try:
            camera = CameraIntrinsics(
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                image_width=None if width is None else int(width),
                image_height=None if height is None else int(height),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigSchemaError(f"invalid camera section: {exc}") from exc

    simulation = SimulationSettings()
    if "simulation" in data:
        entry = data["simulation"]
        if not isinstance(entry, dict):
            raise ConfigSchemaError("simulation section must be an object")
        _check_keys(
            entry,
            {"frame_rate", "duration", "cone_half_angle_deg", "calibration_duration", "noise"},
            set(),
            "simulation",
        )
        noise = NoiseModel()
        if "noise" in entry:
            nentry = entry["noise"]
            if not isinstance(nentry, dict):
                raise ConfigSchemaError("simulation.noise must be an object")
            _check_keys(
                nentry, {"sigma_t", "sigma_r", "sigma_px", "seed"}, set(), "simulation.noise"
            )
            try:
                noise = NoiseModel(
                    sigma_t=float(nentry.get("sigma_t", 0.0)),
                    sigma_r=float(nentry.get("sigma_r", 0.0)),
                    sigma_px=float(nentry.get("sigma_px", 0.0)),
                    seed=int(nentry.get("seed", 0)),
                )
            except (TypeError, ValueError) as exc:
                raise ConfigSchemaError(f"invalid simulation.noise: {exc}") from exc
        try:
            simulation = SimulationSettings(
                frame_rate=float(entry.get("frame_rate", 30.0)),
                duration=float(entry.get("duration", 40.0)),
                cone_half_angle_deg=float(entry.get("cone_half_angle_deg", 30.0)),
                calibration_duration=float(entry.get("calibration_duration", 6.0)),
                noise=noise,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigSchemaError(f"invalid simulation section: {exc}") from exc

    try:
        return NavConfig(
            markers=tuple(markers),
            tools=tuple(tools),
            landmarks=tuple(landmarks),
            divots=tuple(divots),
            camera=camera,
            simulation=simulation,
        )
    except ValueError as exc:
        raise ConfigSchemaError(str(exc)) from exc


def _section(data: dict, name: str) -> list:
    value = data.get(name, [])
    if not isinstance(value, list):
        raise ConfigSchemaError(f"{name} section must be a list")
    for entry in value:
        if not isinstance(entry, dict):
            raise ConfigSchemaError(f"entries of {name} must be objects")
    return value


def config_to_json(config: NavConfig) -> str:
    """Serialize a configuration to stable, diff-friendly JSON."""
    data: dict = {
        "markers": [
            {"id": m.id, "family": m.family, "edge_length": m.edge_length, "role": m.role}
            for m in config.markers
        ],
        "tools": [
            {
                "marker_id": t.tool_marker_id,
                "pose": _pose_to_values(t.tip_in_marker),
                "method": t.method,
                "position_only": t.position_only,
                "rms_residual": t.rms_residual,
            }
            for t in config.tools
        ],
        "landmarks": [
            {"label": lm.label, "frame": lm.frame, "point": [lm.point.x, lm.point.y, lm.point.z]}
            for lm in config.landmarks
        ],
        "divots": [
            {"id": d.id, "owner": d.owner_marker_id, "pose": _pose_to_values(d.divot_in_marker)}
            for d in config.divots
        ],
        "simulation": {
            "frame_rate": config.simulation.frame_rate,
            "duration": config.simulation.duration,
            "cone_half_angle_deg": config.simulation.cone_half_angle_deg,
            "calibration_duration": config.simulation.calibration_duration,
            "noise": {
                "sigma_t": config.simulation.noise.sigma_t,
                "sigma_r": config.simulation.noise.sigma_r,
                "sigma_px": config.simulation.noise.sigma_px,
                "seed": config.simulation.noise.seed,
            },
        },
    }
    if config.camera is not None:
        data["camera"] = {
            "fx": config.camera.fx,
            "fy": config.camera.fy,
            "cx": config.camera.cx,
            "cy": config.camera.cy,
            "image_width": config.camera.image_width,
            "image_height": config.camera.image_height,
        }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def load_config(path) -> NavConfig:
    with open(path, "r", encoding="ascii") as handle:
        return config_from_json(handle.read())


def save_config(path, config: NavConfig) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        handle.write(config_to_json(config))


# ---------------------------------------------------------------------------
# Frame graph

FRAME_PROVENANCES = ("static", "tracked", "calibrated", "registered")


class FrameGraph:
    """A forest of coordinate frames. Each non-root frame stores its pose
    expressed in its parent; resolve() chains poses through the shared
    root. Re-anchoring an already-parented frame raises CycleError, so
    the graph can never contain a loop."""

    def __init__(self) -> None:
        self._parent: dict[str, str | None] = {}
        self._pose: dict[str, RigidTransform] = {}
        self._provenance: dict[str, str] = {}

    def add_frame(self, frame_id: str) -> None:
        """Register a new root frame."""
        if frame_id in self._parent:
            raise DuplicateIdError(f"frame {frame_id!r} already exists")
        self._parent[frame_id] = None

    def add_edge(
        self,
        parent: str,
        child: str,
        pose_in_parent: RigidTransform,
        provenance: str = "static",
    ) -> None:
        """Anchor `child` under `parent` with the child pose expressed in
        the parent frame. Unknown parents become new roots."""
        if provenance not in FRAME_PROVENANCES:
            raise ValueError(
                f"provenance must be one of {', '.join(FRAME_PROVENANCES)}"
            )
        if parent == child:
            raise CycleError(f"frame {child!r} cannot anchor to itself")
        if parent not in self._parent:
            self._parent[parent] = None
        if child in self._parent and self._parent[child] is not None:
            raise CycleError(
                f"frame {child!r} is already anchored to {self._parent[child]!r}"
            )
        node = parent
        while node is not None:
            if node == child:
                raise CycleError(
                    f"anchoring {child!r} under {parent!r} would close a loop"
                )
            node = self._parent[node]
        self._parent[child] = parent
        self._pose[child] = pose_in_parent
        self._provenance[child] = provenance

    def update_edge(self, child: str, pose_in_parent: RigidTransform) -> None:
        """Re-pose an existing child under its current parent (for per-frame
        tracking updates)."""
        if child not in self._parent:
            raise UnknownFrameError(f"unknown frame {child!r}")
        if self._parent[child] is None:
            raise UnknownFrameError(f"frame {child!r} is a root and has no edge")
        self._pose[child] = pose_in_parent

    @property
    def frames(self) -> tuple:
        return tuple(self._parent)

    def parent_of(self, frame_id: str) -> str | None:
        if frame_id not in self._parent:
            raise UnknownFrameError(f"unknown frame {frame_id!r}")
        return self._parent[frame_id]

    def provenance_of(self, frame_id: str) -> str | None:
        if frame_id not in self._parent:
            raise UnknownFrameError(f"unknown frame {frame_id!r}")
        return self._provenance.get(frame_id)

    def _chain_to_root(self, frame_id: str) -> tuple[str, RigidTransform]:
        transform = RigidTransform.identity()
        node = frame_id
        while self._parent[node] is not None:
            transform = compose(self._pose[node], transform)
            node = self._parent[node]
        return node, transform

    def resolve(self, source: str, target: str) -> RigidTransform:
        """Transform mapping source-frame coordinates into target-frame
        coordinates. Frames under different roots have no path."""
        for frame_id in (source, target):
            if frame_id not in self._parent:
                raise UnknownFrameError(f"unknown frame {frame_id!r}")
        source_root, to_source = self._chain_to_root(source)
        target_root, to_target = self._chain_to_root(target)
        if source_root != target_root:
            raise NoPathError(
                f"no path from {source!r} (root {source_root!r}) "
                f"to {target!r} (root {target_root!r})"
            )
        return compose(invert(to_target), to_source)

    def copy(self) -> "FrameGraph":
        other = FrameGraph()
        other._parent = dict(self._parent)
        other._pose = dict(self._pose)
        other._provenance = dict(self._provenance)
        return other


def resolve_frame(graph: FrameGraph, source: str, target: str) -> RigidTransform:
    return graph.resolve(source, target)


# ---------------------------------------------------------------------------
# Records


def _quantize_timestamp(value: float) -> float:
    ts = round(float(value), 6)
    if not np.isfinite(ts):
        raise ValueError("timestamp must be finite")
    return ts


def _check_token(value: str, what: str) -> str:
    if not value or any(c.isspace() for c in value):
        raise ValueError(f"{what} must be non-empty without whitespace")
    return value


@dataclass(frozen=True)
class CamRecord:
    """One camera pose sample: world pose of the camera at a timestamp."""

    timestamp: float
    pose: RigidTransform

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamp", _quantize_timestamp(self.timestamp))


@dataclass(frozen=True)
class ObsRecord:
    """One marker detection: four corner pixel coordinates, top-left first,
    counter-clockwise."""

    timestamp: float
    marker_id: str
    corners: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamp", _quantize_timestamp(self.timestamp))
        _check_token(self.marker_id, "marker_id")
        corners = np.array(self.corners, dtype=float)
        if corners.shape != (4, 2) or not np.all(np.isfinite(corners)):
            raise ValueError("corners must be a finite (4, 2) array")
        corners.setflags(write=False)
        object.__setattr__(self, "corners", corners)


@dataclass(frozen=True)
class CalRecord:
    """A stored tool calibration result."""

    tool_marker_id: str
    method: str
    pose: RigidTransform
    rms: float

    def __post_init__(self) -> None:
        _check_token(self.tool_marker_id, "tool_marker_id")
        if self.method not in CALIBRATION_METHODS:
            raise ValueError(
                f"method must be one of {', '.join(CALIBRATION_METHODS)}"
            )
        if not self.rms >= 0:
            raise ValueError("rms must be non-negative")


@dataclass(frozen=True)
class RegRecord:
    """A stored registration result: transform, FRE, and point count."""

    pose: RigidTransform
    fre: float
    point_count: int

    def __post_init__(self) -> None:
        if not self.fre >= 0:
            raise ValueError("fre must be non-negative")
        if self.point_count < 3:
            raise ValueError("point_count must be at least 3")


@dataclass(frozen=True)
class LmRecord:
    """A named landmark point in the image or patient frame."""

    label: str
    frame: str
    point: Point3

    def __post_init__(self) -> None:
        _check_token(self.label, "label")
        if self.frame not in LANDMARK_FRAMES:
            raise ValueError(f"frame must be one of {', '.join(LANDMARK_FRAMES)}")


@dataclass(frozen=True)
class TrajRecord:
    """A planned straight trajectory: entry and exit points."""

    label: str
    entry: Point3
    exit: Point3

    def __post_init__(self) -> None:
        _check_token(self.label, "label")
        if np.allclose(self.entry.array, self.exit.array):
            raise ValueError("entry and exit must differ")

    def trajectory(self) -> Trajectory:
        return Trajectory(entry=self.entry, exit=self.exit, label=self.label)


@dataclass(frozen=True)
class PolylineRecord:
    """A drawn polyline (e.g. an incision path) as ordered points."""

    label: str
    points: tuple

    def __post_init__(self) -> None:
        _check_token(self.label, "label")
        points = tuple(Point3.of(p) for p in self.points)
        if len(points) < 2:
            raise ValueError("polyline needs at least 2 points")
        object.__setattr__(self, "points", points)

    def polyline(self) -> Polyline:
        return Polyline(points=self.points, label=self.label)


Record = (
    CamRecord | ObsRecord | CalRecord | RegRecord | LmRecord | TrajRecord | PolylineRecord
)

RECORD_TYPES = ("CAM", "OBS", "CAL", "REG", "LM", "TRAJ", "PL")


def _fmt_ts(ts: float) -> str:
    return f"{ts:.6f}"


def _fmt_point(p: Point3) -> str:
    return " ".join(format_float(v) for v in (p.x, p.y, p.z))


def format_record(record) -> str:
    """Single canonical text form of a record (no trailing newline; PL
    records span multiple lines)."""
    if isinstance(record, CamRecord):
        return f"CAM {_fmt_ts(record.timestamp)} {format_pose(record.pose)}"
    if isinstance(record, ObsRecord):
        px = " ".join(format_float(v) for v in record.corners.reshape(-1))
        return f"OBS {_fmt_ts(record.timestamp)} {record.marker_id} {px}"
    if isinstance(record, CalRecord):
        return (
            f"CAL {record.tool_marker_id} {record.method} "
            f"{format_pose(record.pose)} {format_float(record.rms)}"
        )
    if isinstance(record, RegRecord):
        return (
            f"REG {format_pose(record.pose)} "
            f"{format_float(record.fre)} {record.point_count}"
        )
    if isinstance(record, LmRecord):
        return f"LM {record.label} {record.frame} {_fmt_point(record.point)}"
    if isinstance(record, TrajRecord):
        return f"TRAJ {record.label} {_fmt_point(record.entry)} {_fmt_point(record.exit)}"
    if isinstance(record, PolylineRecord):
        lines = [f"PL {record.label}"]
        lines.extend(_fmt_point(p) for p in record.points)
        return "\n".join(lines)
    raise TypeError(f"not a record: {type(record).__name__}")


def records_to_text(records: Iterable) -> str:
    lines = [format_record(r) for r in records]
    return "\n".join(lines) + "\n" if lines else ""


def _parse_floats(tokens: Sequence[str], count: int, line_no: int, what: str) -> list:
    if len(tokens) != count:
        raise RecordParseError(line_no, f"{what} needs {count} values, got {len(tokens)}")
    values = []
    for tok in tokens:
        try:
            values.append(float(tok))
        except ValueError:
            raise RecordParseError(line_no, f"bad number {tok!r} in {what}") from None
    return values


def _parse_pose_tokens(tokens: Sequence[str], line_no: int, what: str):
    _parse_floats(tokens, 7, line_no, what)
    try:
        return parse_pose(tokens)
    except ValueError as exc:
        raise RecordParseError(line_no, f"bad pose in {what}: {exc}") from exc


def parse_records(text: str) -> list:
    """Parse a recording. Blank lines and '#' comments are skipped; any
    malformed line raises RecordParseError with its 1-based line number."""
    records: list = []
    pending_pl: tuple[int, str, list] | None = None

    def flush_pl() -> None:
        nonlocal pending_pl
        if pending_pl is None:
            return
        line_no, label, pts = pending_pl
        pending_pl = None
        if len(pts) < 2:
            raise RecordParseError(line_no, f"polyline {label!r} needs at least 2 points")
        try:
            records.append(PolylineRecord(label=label, points=tuple(pts)))
        except ValueError as exc:
            raise RecordParseError(line_no, str(exc)) from exc

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        if pending_pl is not None and kind not in RECORD_TYPES:
            values = _parse_floats(tokens, 3, line_no, "polyline point")
            pending_pl[2].append(Point3(*values))
            continue
        flush_pl()
        payload = tokens[1:]
        try:
            if kind == "CAM":
                if len(payload) != 8:
                    raise RecordParseError(line_no, "CAM needs a timestamp and 7 pose values")
                ts = _parse_floats(payload[:1], 1, line_no, "CAM timestamp")[0]
                pose = _parse_pose_tokens(payload[1:], line_no, "CAM pose")
                records.append(CamRecord(timestamp=ts, pose=pose))
            elif kind == "OBS":
                if len(payload) != 10:
                    raise RecordParseError(
                        line_no, "OBS needs a timestamp, marker id, and 8 corner values"
                    )
                ts = _parse_floats(payload[:1], 1, line_no, "OBS timestamp")[0]
                px = _parse_floats(payload[2:], 8, line_no, "OBS corners")
                records.append(
                    ObsRecord(
                        timestamp=ts,
                        marker_id=payload[1],
                        corners=np.array(px).reshape(4, 2),
                    )
                )
            elif kind == "CAL":
                if len(payload) != 10:
                    raise RecordParseError(
                        line_no, "CAL needs marker id, method, 7 pose values, and rms"
                    )
                pose = _parse_pose_tokens(payload[2:9], line_no, "CAL pose")
                rms = _parse_floats(payload[9:], 1, line_no, "CAL rms")[0]
                records.append(
                    CalRecord(
                        tool_marker_id=payload[0], method=payload[1], pose=pose, rms=rms
                    )
                )
            elif kind == "REG":
                if len(payload) != 9:
                    raise RecordParseError(
                        line_no, "REG needs 7 pose values, fre, and point count"
                    )
                pose = _parse_pose_tokens(payload[:7], line_no, "REG pose")
                fre = _parse_floats(payload[7:8], 1, line_no, "REG fre")[0]
                try:
                    count = int(payload[8])
                except ValueError:
                    raise RecordParseError(
                        line_no, f"bad point count {payload[8]!r}"
                    ) from None
                records.append(RegRecord(pose=pose, fre=fre, point_count=count))
            elif kind == "LM":
                if len(payload) != 5:
                    raise RecordParseError(
                        line_no, "LM needs label, frame, and 3 coordinates"
                    )
                values = _parse_floats(payload[2:], 3, line_no, "LM point")
                records.append(
                    LmRecord(label=payload[0], frame=payload[1], point=Point3(*values))
                )
            elif kind == "TRAJ":
                if len(payload) != 7:
                    raise RecordParseError(
                        line_no, "TRAJ needs label and 6 coordinates"
                    )
                values = _parse_floats(payload[1:], 6, line_no, "TRAJ points")
                records.append(
                    TrajRecord(
                        label=payload[0],
                        entry=Point3(*values[:3]),
                        exit=Point3(*values[3:]),
                    )
                )
            elif kind == "PL":
                if len(payload) != 1:
                    raise RecordParseError(line_no, "PL needs exactly a label")
                pending_pl = (line_no, payload[0], [])
            else:
                raise RecordParseError(line_no, f"unknown record type {kind!r}")
        except RecordParseError:
            raise
        except ValueError as exc:
            raise RecordParseError(line_no, str(exc)) from exc
    flush_pl()
    return records


class StreamWriter:
    """Append-only record sink enforcing monotone non-decreasing timestamps
    on the timed record types (CAM, OBS)."""

    def __init__(self, sink: TextIO | None = None):
        self._sink = sink
        self._records: list = []
        self._last_time: float | None = None

    def append(self, record) -> None:
        ts = getattr(record, "timestamp", None)
        if ts is not None:
            if self._last_time is not None and ts < self._last_time:
                raise OutOfOrderError(
                    f"record time {ts} precedes {self._last_time}"
                )
            self._last_time = ts
        self._records.append(record)
        if self._sink is not None:
            self._sink.write(format_record(record) + "\n")

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def to_text(self) -> str:
        return records_to_text(self._records)


def read_records(path) -> list:
    with open(path, "r", encoding="ascii") as handle:
        return parse_records(handle.read())


def write_records(path, records: Iterable) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        handle.write(records_to_text(records))


# ---------------------------------------------------------------------------
# Replay


@dataclass(frozen=True)
class ReplayFrame:
    """State after one camera frame of a replayed recording."""

    camera: CameraSample
    observations: tuple
    registry: TrackingRegistry


def replay_tracking(
    records: Sequence,
    specs: Sequence[MarkerSpec],
    intrinsics: CameraIntrinsics | None = None,
) -> list[ReplayFrame]:
    """Re-run the tracking state machine over a recorded stream.

    Each CAM record opens a frame; the OBS records that follow it (until
    the next CAM) belong to that frame. Non-stream records are ignored.
    Output is a pure function of the inputs, so replaying a recording
    twice yields identical state sequences.
    """
    registry = TrackingRegistry.from_specs(specs)
    frames: list[ReplayFrame] = []
    current_cam: CamRecord | None = None
    current_obs: list[MarkerObservation] = []

    def flush() -> None:
        nonlocal registry
        if current_cam is None:
            return
        camera = CameraSample(pose_world=current_cam.pose, timestamp=current_cam.timestamp)
        registry = step_tracking(registry, current_obs, camera, intrinsics)
        frames.append(
            ReplayFrame(camera=camera, observations=tuple(current_obs), registry=registry)
        )

    for record in records:
        if isinstance(record, CamRecord):
            flush()
            current_cam = record
            current_obs = []
        elif isinstance(record, ObsRecord):
            if current_cam is None:
                raise OutOfOrderError("observation record precedes any camera record")
            current_obs.append(
                MarkerObservation(
                    marker_id=record.marker_id,
                    corners_2d=record.corners,
                    timestamp=record.timestamp,
                )
            )
    flush()
    return frames
