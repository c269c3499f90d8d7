"""Command-line surface tying the kernel together.

Subcommands:

    calibrate {pivot,calibrator,marker}   solve a tool calibration from a recording
    register                              point-based registration from landmarks
    simulate                              emit synthetic recordings or Monte-Carlo CSV
    replay                                re-run tracking over a recording
    metrics                               trajectory / insertion / incision reports
    validate-config                       parse and cross-check a configuration

Conventions: stdout carries data (record lines or CSV), stderr carries
diagnostics; every simulated artifact embeds its seed in '#' header
lines. Exit codes: 0 success, 1 usage error, 2 input or parse error,
3 numerical or degenerate-geometry error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import Sequence

import numpy as np

from .calibration import (
    PivotSample,
    ToolCalibration,
    calibrate_marker_to_marker,
    calibrate_with_calibrator,
    pivot_calibrate,
)
from .errors import (
    ConfigError,
    NavkitError,
    OutOfOrderError,
    RecordParseError,
    UnknownMetricError,
    UnregisteredMarkerError,
)
from .geometry import Point3, RigidTransform, format_float, format_pose
from .metrics import ToolLine, incision_deviation, insertion_error, trajectory_deviation
from .registration import Landmark, LandmarkSet, point_based_register
from .session import (
    CalRecord,
    CamRecord,
    LmRecord,
    NavConfig,
    ObsRecord,
    PolylineRecord,
    RegRecord,
    TrajRecord,
    load_config,
    read_records,
    records_to_text,
    replay_tracking,
)
from .simulator import (
    METRIC_NAMES,
    NoiseModel,
    TrackingErrorProcess,
    default_scenario,
    run_monte_carlo,
    simulate_calibration_session,
    simulate_pivot_session,
    statistics_to_csv,
)
from .tracking import CameraIntrinsics, MarkerSpec, marker_corners, project_points

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

DEFAULT_INTRINSICS = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=0.0, cy=0.0)

SIMULATE_KINDS = ("pivot", "calibrator", "marker", "scene", "registration")

_KIND_METRIC = {
    "pivot": "pivot_tip_error",
    "calibrator": "calibrator_tip_error",
    "marker": "marker_to_marker_tip_error",
    "registration": "registration_fre",
}


class _InputProblem(Exception):
    """Raised for semantically invalid inputs (exit code 2)."""


def _default_specs() -> tuple:
    return tuple(spec for spec, _ in default_scenario().markers)


def _noise_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected sigma_t,sigma_r,sigma_px")
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("noise sigmas must be non-negative")
    return values


def _tool_line(text: str) -> ToolLine:
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("expected tx,ty,tz,dx,dy,dz")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None
    try:
        return ToolLine(tip=Point3(*values[:3]), direction=tuple(values[3:]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with exit status 2 by default; this
    kernel reserves 2 for input data errors, so usage errors exit 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="navkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p_cal = sub.add_parser("calibrate", help="solve a tool calibration from a recording")
    p_cal.add_argument("method", choices=("pivot", "calibrator", "marker"))
    p_cal.add_argument("--in", dest="infile", required=True, help="input recording")
    p_cal.add_argument("--config", help="configuration file")
    p_cal.add_argument("--out", help="also write the CAL line to this file")
    p_cal.add_argument("--tool", help="tool marker id (default: inferred)")
    p_cal.add_argument("--divot", help="divot id from the config")
    p_cal.add_argument("--trim", action="store_true", help="drop gross pivot outliers")

    p_reg = sub.add_parser("register", help="point-based registration from landmarks")
    p_reg.add_argument("--config", help="configuration file with landmarks")
    p_reg.add_argument("--in", dest="infile", help="recording with LM lines")
    p_reg.add_argument("--out", help="also write the REG line to this file")

    p_sim = sub.add_parser("simulate", help="synthesize recordings or Monte-Carlo CSV")
    p_sim.add_argument("--scenario", help="configuration file with simulation settings")
    p_sim.add_argument("--kind", choices=SIMULATE_KINDS, default="pivot")
    p_sim.add_argument("--seed", type=int, help="override the noise seed")
    p_sim.add_argument("--noise", type=_noise_triple, metavar="T,R,PX",
                       help="override sigmas: sigma_t,sigma_r,sigma_px")
    p_sim.add_argument("--trials", type=int, help="run Monte-Carlo trials instead")
    p_sim.add_argument("--metric", choices=METRIC_NAMES, help="Monte-Carlo metric")
    p_sim.add_argument("--points", type=int, help="landmark count for registration kind")
    p_sim.add_argument("--out", help="also write the output to this file")

    p_rep = sub.add_parser("replay", help="re-run tracking over a recording")
    p_rep.add_argument("--in", dest="infile", required=True, help="input recording")
    p_rep.add_argument("--config", help="configuration file")
    p_rep.add_argument("--out", help="also write TRACK lines to this file")

    p_met = sub.add_parser("metrics", help="trajectory / insertion / incision reports")
    p_met.add_argument("--kind", choices=("trajectory", "insertion", "incision"), required=True)
    p_met.add_argument("--in", dest="infile", required=True,
                       help="measured input (TRAJ or PL lines)")
    p_met.add_argument("--against", help="planned reference file (TRAJ or PL lines)")
    p_met.add_argument("--tool", type=_tool_line, metavar="X,Y,Z,DX,DY,DZ",
                       help="tool tip and direction for insertion")
    p_met.add_argument("--samples", type=int, default=100, help="sampling density")
    p_met.add_argument("--out", help="also write the CSV to this file")

    p_val = sub.add_parser("validate-config", help="parse and cross-check a configuration")
    p_val.add_argument("path", help="configuration file")
    return parser


def _emit(text: str, out_path: str | None) -> None:
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w", encoding="ascii", newline="\n") as handle:
            handle.write(text)


def _load_optional_config(path: str | None) -> NavConfig | None:
    return load_config(path) if path else None


def _specs_for(config: NavConfig | None) -> tuple:
    if config is not None and config.markers:
        return config.markers
    return _default_specs()


def _intrinsics_for(config: NavConfig | None) -> CameraIntrinsics:
    if config is not None and config.camera is not None:
        return config.camera
    return DEFAULT_INTRINSICS


def _spec_by_id(specs: Sequence[MarkerSpec], marker_id: str) -> MarkerSpec:
    for spec in specs:
        if spec.id == marker_id:
            return spec
    raise _InputProblem(f"no marker spec for id {marker_id!r}")


def _true_calibration(config: NavConfig | None) -> ToolCalibration:
    if config is not None:
        tools = [t for t in config.tools]
        if len(tools) == 1:
            return tools[0]
        for t in tools:
            if config.marker(t.tool_marker_id).role == "tool":
                return t
    return default_scenario().tool_calibrations[0]


def _infer_tool_id(
    explicit: str | None, specs: Sequence[MarkerSpec], records: Sequence
) -> str:
    if explicit:
        return explicit
    observed = sorted({r.marker_id for r in records if isinstance(r, ObsRecord)})
    tool_ids = [s.id for s in specs if s.role == "tool" and s.id in observed]
    if len(tool_ids) == 1:
        return tool_ids[0]
    if len(observed) == 1:
        return observed[0]
    raise _InputProblem(
        "cannot infer the tool marker id; pass --tool (observed: "
        + (", ".join(observed) if observed else "none")
        + ")"
    )


def _divot_for(config: NavConfig | None, divot_id: str | None, owner_role: str):
    """Pick the divot: an explicit id from the config, the unique eligible
    config divot, or the built-in default for that owner role."""
    if divot_id:
        if config is None:
            raise _InputProblem("--divot needs --config")
        try:
            return config.divot(divot_id)
        except KeyError as exc:
            raise _InputProblem(str(exc)) from exc
    if config is not None and config.divots:
        eligible = [
            d for d in config.divots
            if config.marker(d.owner_marker_id).role == owner_role
        ]
        if not eligible:
            eligible = list(config.divots)
        if len(eligible) == 1:
            return eligible[0]
        raise _InputProblem(
            "multiple divots configured; pass --divot with one of: "
            + ", ".join(d.id for d in eligible)
        )
    scenario = default_scenario()
    spec = scenario.calibrator_divot if owner_role == "calibrator" else scenario.reference_divot
    return _NamedDefault(spec.owner_marker_id, spec)


class _NamedDefault:
    """Adapter giving built-in divot specs the config NamedDivot surface."""

    def __init__(self, owner_marker_id: str, spec):
        self.id = "default"
        self.owner_marker_id = owner_marker_id
        self._spec = spec

    @property
    def spec(self):
        return self._spec


# ---------------------------------------------------------------------------
# calibrate


def _cmd_calibrate(args) -> int:
    records = read_records(args.infile)
    config = _load_optional_config(args.config)
    specs = _specs_for(config)
    intrinsics = _intrinsics_for(config)
    frames = replay_tracking(records, specs, intrinsics)
    tool_id = _infer_tool_id(args.tool, specs, records)

    if args.method == "pivot":
        samples = [
            PivotSample(state.world_pose, frame.camera.timestamp)
            for frame in frames
            for state in (frame.registry.state(tool_id),)
            if state.mode == "tracked"
        ]
        result = pivot_calibrate(samples, trim=args.trim)
        record = CalRecord(
            tool_marker_id=tool_id,
            method="pivot",
            pose=RigidTransform(np.eye(3), np.asarray(result.tip_in_marker)),
            rms=result.rms_residual,
        )
    else:
        owner_role = "calibrator" if args.method == "calibrator" else "reference"
        divot = _divot_for(config, args.divot, owner_role)
        pairs = []
        for frame in frames:
            tool_state = frame.registry.state(tool_id)
            owner_state = frame.registry.state(divot.owner_marker_id)
            if tool_state.mode == "tracked" and owner_state.mode == "tracked":
                pairs.append((tool_state.world_pose, owner_state.world_pose))
        solver = calibrate_with_calibrator if args.method == "calibrator" else calibrate_marker_to_marker
        calib = solver(pairs, divot.spec, tool_marker_id=tool_id)
        record = CalRecord(
            tool_marker_id=tool_id,
            method=calib.method,
            pose=calib.tip_in_marker,
            rms=calib.rms_residual,
        )
    _emit(records_to_text([record]), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# register


def _cmd_register(args) -> int:
    config = _load_optional_config(args.config)
    if config is None and not args.infile:
        raise _InputProblem("register needs --config and/or --in")
    landmarks: list[Landmark] = list(config.landmarks) if config else []
    if args.infile:
        for record in read_records(args.infile):
            if isinstance(record, LmRecord):
                landmarks.append(
                    Landmark(label=record.label, point=record.point, frame=record.frame)
                )
    _, model, patient = LandmarkSet(tuple(landmarks)).matched_pairs()
    result = point_based_register(model, patient)
    record = RegRecord(
        pose=result.image_to_world, fre=result.fre, point_count=result.point_count
    )
    _emit(records_to_text([record]), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _sim_noise(args, config: NavConfig | None) -> NoiseModel:
    base = config.simulation.noise if config else NoiseModel()
    sigma_t, sigma_r, sigma_px = (base.sigma_t, base.sigma_r, base.sigma_px)
    if args.noise is not None:
        sigma_t, sigma_r, sigma_px = args.noise
    seed = base.seed if args.seed is None else args.seed
    return NoiseModel(sigma_t=sigma_t, sigma_r=sigma_r, sigma_px=sigma_px, seed=seed)


def _sim_header(kind: str, noise: NoiseModel) -> str:
    return (
        f"# navkit simulate kind={kind} seed={noise.seed}\n"
        f"# noise {noise.label()}\n"
    )


def _scenario_for(config: NavConfig | None):
    scenario = default_scenario()
    if config is None:
        return scenario
    sim = config.simulation
    return replace(
        scenario,
        frame_rate=sim.frame_rate,
        duration=sim.duration,
        cone_half_angle_deg=sim.cone_half_angle_deg,
        calibration_duration=sim.calibration_duration,
    )


def _build_pivot_records(config: NavConfig | None, noise: NoiseModel) -> list:
    sim = config.simulation if config else NavConfig().simulation
    calib = _true_calibration(config)
    specs = _specs_for(config)
    spec = _spec_by_id(specs, calib.tool_marker_id)
    intrinsics = _intrinsics_for(config)
    count = int(round(sim.frame_rate * sim.duration))
    rng = np.random.default_rng(noise.seed)
    session = simulate_pivot_session(
        calib, sim.cone_half_angle_deg, count, noise, rate_hz=sim.frame_rate, rng=rng
    )
    identity = RigidTransform.identity()
    corners_m = marker_corners(spec.edge_length)
    records: list = []
    for sample in session:
        corners = project_points(intrinsics, sample.marker_world_pose, corners_m)
        if noise.sigma_px > 0:
            corners = corners + rng.normal(0.0, noise.sigma_px, (4, 2))
        records.append(CamRecord(timestamp=sample.timestamp, pose=identity))
        records.append(
            ObsRecord(timestamp=sample.timestamp, marker_id=spec.id, corners=corners)
        )
    return records


def _build_calibration_records(
    config: NavConfig | None, noise: NoiseModel, owner_role: str
) -> list:
    sim = config.simulation if config else NavConfig().simulation
    calib = _true_calibration(config)
    divot = _divot_for(config, None, owner_role)
    specs = _specs_for(config)
    tool_spec = _spec_by_id(specs, calib.tool_marker_id)
    owner_spec = _spec_by_id(specs, divot.owner_marker_id)
    intrinsics = _intrinsics_for(config)
    owner_world = default_scenario().marker_world(divot.owner_marker_id)
    count = int(round(sim.frame_rate * sim.calibration_duration))
    rng = np.random.default_rng(noise.seed)
    session = simulate_calibration_session(
        calib, divot.spec, count, noise,
        owner_world=owner_world, rate_hz=sim.frame_rate, rng=rng,
    )
    identity = RigidTransform.identity()
    records: list = []
    for k, (tool_world, owner_world_pose) in enumerate(session):
        ts = k / sim.frame_rate
        records.append(CamRecord(timestamp=ts, pose=identity))
        for spec, pose in ((tool_spec, tool_world), (owner_spec, owner_world_pose)):
            corners = project_points(intrinsics, pose, marker_corners(spec.edge_length))
            if noise.sigma_px > 0:
                corners = corners + rng.normal(0.0, noise.sigma_px, (4, 2))
            records.append(ObsRecord(timestamp=ts, marker_id=spec.id, corners=corners))
    return records


def _build_scene_records(config: NavConfig | None, noise: NoiseModel) -> list:
    sim = config.simulation if config else NavConfig().simulation
    scenario = default_scenario()
    intrinsics = _intrinsics_for(config)
    count = int(round(sim.frame_rate * sim.duration))
    rng = np.random.default_rng(noise.seed)
    process = TrackingErrorProcess(noise, rng, dt=1.0 / sim.frame_rate)
    identity = RigidTransform.identity()
    records: list = []
    for k in range(count):
        ts = k / sim.frame_rate
        records.append(CamRecord(timestamp=ts, pose=identity))
        drift = process.step()
        for spec, pose in scenario.markers:
            rot, t = process.perturb(pose.rotation, pose.translation, drift)
            corners = project_points(
                intrinsics, RigidTransform(rot, t), marker_corners(spec.edge_length)
            )
            if noise.sigma_px > 0:
                corners = corners + rng.normal(0.0, noise.sigma_px, (4, 2))
            records.append(ObsRecord(timestamp=ts, marker_id=spec.id, corners=corners))
    return records


def _build_registration_records(
    config: NavConfig | None, noise: NoiseModel, points: int | None
) -> list:
    scenario = default_scenario()
    rng = np.random.default_rng(noise.seed)
    model: list[tuple[str, Point3]] = []
    if config is not None:
        model = [
            (lm.label, lm.point) for lm in config.landmarks if lm.frame == "image"
        ]
    if points is not None or len(model) < 3:
        n = points if points is not None else len(scenario.landmarks)
        if n < 3:
            raise _InputProblem("registration needs at least 3 points")
        coords = rng.uniform(-50.0, 50.0, (n, 3))
        model = [(f"F{i + 1}", Point3(*coords[i])) for i in range(n)]
    truth = scenario.image_to_world
    records: list = []
    for label, point in model:
        records.append(LmRecord(label=label, frame="image", point=point))
    for label, point in model:
        moved = truth.rotation @ point.array + truth.translation
        noisy = moved + rng.normal(0.0, noise.sigma_t, 3)
        records.append(LmRecord(label=label, frame="patient", point=Point3(*noisy)))
    return records


def _cmd_simulate(args) -> int:
    config = _load_optional_config(args.scenario)
    noise = _sim_noise(args, config)

    if args.trials is not None:
        if args.trials < 1:
            raise _InputProblem("--trials must be at least 1")
        metric = args.metric or _KIND_METRIC.get(args.kind)
        if metric is None:
            raise _InputProblem(f"pass --metric for Monte-Carlo runs of kind {args.kind!r}")
        stats = run_monte_carlo(_scenario_for(config), [noise], args.trials, metric)
        text = f"# navkit simulate kind={args.kind} seed={noise.seed}\n"
        text += statistics_to_csv(stats)
        _emit(text, args.out)
        return EXIT_OK

    if args.kind == "pivot":
        records = _build_pivot_records(config, noise)
    elif args.kind in ("calibrator", "marker"):
        owner_role = "calibrator" if args.kind == "calibrator" else "reference"
        records = _build_calibration_records(config, noise, owner_role)
    elif args.kind == "scene":
        records = _build_scene_records(config, noise)
    else:
        records = _build_registration_records(config, noise, args.points)
    _emit(_sim_header(args.kind, noise) + records_to_text(records), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay


def _cmd_replay(args) -> int:
    records = read_records(args.infile)
    config = _load_optional_config(args.config)
    frames = replay_tracking(records, _specs_for(config), _intrinsics_for(config))
    lines = []
    for frame in frames:
        for marker_id in sorted(frame.registry.states):
            state = frame.registry.states[marker_id]
            if state.mode == "never_seen":
                continue
            lines.append(
                f"TRACK {frame.camera.timestamp:.6f} {marker_id} "
                f"{state.mode} {format_pose(state.world_pose)}"
            )
    _emit("\n".join(lines) + ("\n" if lines else ""), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics


def _records_of(path: str, record_type, what: str) -> dict:
    out = {}
    for record in read_records(path):
        if isinstance(record, record_type):
            out[record.label] = record
    if not out:
        raise _InputProblem(f"{path} holds no {what} records")
    return out


def _cmd_metrics(args) -> int:
    rows: list[str] = []
    if args.kind == "trajectory":
        if not args.against:
            raise _InputProblem("metrics --kind trajectory needs --against")
        measured = _records_of(args.infile, TrajRecord, "TRAJ")
        planned = _records_of(args.against, TrajRecord, "TRAJ")
        rows.append("label,distance_mm,angle_deg")
        for label in sorted(measured):
            if label not in planned:
                raise _InputProblem(f"no planned trajectory labeled {label!r}")
            distance, angle = trajectory_deviation(
                measured[label].trajectory(), planned[label].trajectory()
            )
            rows.append(f"{label},{format_float(distance)},{format_float(angle)}")
    elif args.kind == "insertion":
        if args.tool is None:
            raise _InputProblem("metrics --kind insertion needs --tool X,Y,Z,DX,DY,DZ")
        planned = _records_of(args.infile, TrajRecord, "TRAJ")
        rows.append("label,entry_mm,exit_mm,mean_mm,angle_deg")
        for label in sorted(planned):
            entry, exit_d, mean, angle = insertion_error(
                args.tool, planned[label].trajectory(), samples=args.samples
            )
            rows.append(
                f"{label},{format_float(entry)},{format_float(exit_d)},"
                f"{format_float(mean)},{format_float(angle)}"
            )
    else:
        if not args.against:
            raise _InputProblem("metrics --kind incision needs --against")
        drawn = _records_of(args.infile, PolylineRecord, "PL")
        planned = _records_of(args.against, PolylineRecord, "PL")
        rows.append("label,mean_mm")
        for label in sorted(drawn):
            if label not in planned:
                raise _InputProblem(f"no planned incision labeled {label!r}")
            mean = incision_deviation(
                drawn[label].polyline(), planned[label].polyline(), samples=args.samples
            )
            rows.append(f"{label},{format_float(mean)}")
    _emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate-config


def _cmd_validate_config(args) -> int:
    load_config(args.path)
    sys.stdout.write("ok\n")
    return EXIT_OK


_DISPATCH = {
    "calibrate": _cmd_calibrate,
    "register": _cmd_register,
    "simulate": _cmd_simulate,
    "replay": _cmd_replay,
    "metrics": _cmd_metrics,
    "validate-config": _cmd_validate_config,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (
        ConfigError,
        RecordParseError,
        OutOfOrderError,
        UnregisteredMarkerError,
        UnknownMetricError,
        _InputProblem,
    ) as exc:
        print(f"navkit: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"navkit: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NavkitError as exc:
        print(f"navkit: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"navkit: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
