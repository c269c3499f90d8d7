"""navkit: a stand-alone navigation kernel for marker-based surgical
guidance. Rigid-transform math, planar marker pose estimation and a
tracked/extended-tracked state machine, tool-tip calibration (pivot and
divot methods), point-based registration, clinically motivated accuracy
metrics, a deterministic synthetic-session simulator with Monte-Carlo
summaries, and a recording/replay session layer."""

from .calibration import (
    CALIBRATION_METHODS,
    DivotSpec,
    PivotResult,
    PivotSample,
    ToolCalibration,
    average_transforms,
    calibrate_marker_to_marker,
    calibrate_with_calibrator,
    calibration_pose_error,
    pivot_calibrate,
    tooltip_world,
)
from .errors import (
    ConfigError,
    ConfigSchemaError,
    CountMismatchError,
    CycleError,
    DanglingReferenceError,
    DegenerateConfigurationError,
    DuplicateIdError,
    InsufficientDataError,
    NavkitError,
    NoPathError,
    NotVisibleError,
    NoValidPoseError,
    OutOfOrderError,
    RecordParseError,
    RotationDiversityError,
    UnknownFrameError,
    UnknownMetricError,
    UnregisteredMarkerError,
)
from .geometry import (
    Point3,
    RigidTransform,
    UnitQuaternion,
    compose,
    format_pose,
    invert,
    orthonormalize,
    parse_pose,
    rotation_about_axis,
    rotation_angle_between,
    transform_point,
    transform_points,
)
from .metrics import (
    Polyline,
    ToolLine,
    Trajectory,
    fre,
    incision_deviation,
    insertion_error,
    surface_deviation,
    trajectory_deviation,
    tre,
)
from .registration import (
    Landmark,
    LandmarkSet,
    ManualAdjustment,
    RegistrationResult,
    apply_manual_adjustment,
    point_based_register,
)
from .session import (
    CalRecord,
    CamRecord,
    FrameGraph,
    LmRecord,
    NavConfig,
    ObsRecord,
    PolylineRecord,
    RegRecord,
    StreamWriter,
    TrajRecord,
    config_from_json,
    config_to_json,
    load_config,
    parse_records,
    read_records,
    records_to_text,
    replay_tracking,
    resolve_frame,
    save_config,
    write_records,
)
from .simulator import (
    NoiseModel,
    Scenario,
    TrialStatistics,
    default_scenario,
    derive_seed,
    run_monte_carlo,
    simulate_calibration_session,
    simulate_pivot_session,
    simulate_registration_trial,
    statistics_to_csv,
    synthesize_observation,
)
from .tracking import (
    CameraIntrinsics,
    CameraSample,
    MarkerObservation,
    MarkerSpec,
    TrackedMarkerState,
    TrackingRegistry,
    marker_corners,
    marker_world_pose,
    solve_marker_pnp,
    solve_planar_pnp,
    step_tracking,
)

__version__ = "0.1.0"
