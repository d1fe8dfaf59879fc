"""Multi-IMU extrinsic calibration, virtual-IMU fusion, and on-manifold
preintegration."""

from .calibration import (
    CalibrationInput,
    CalibrationResult,
    WeightSchedule,
    calibrate,
    estimate_angular_accel,
    estimate_rotation,
    estimate_translation,
)
from .errors import (
    BoundaryIndex,
    DegenerateMotion,
    EmptyOverlap,
    FormatError,
    LengthMismatch,
    MimuError,
    NotConverged,
    RateMismatch,
    SingularFusion,
    SingularNormalEquations,
)
from .harness import ExperimentPlan, RmseReport, ingest_csv, run_experiment
from .preintegration import (
    PreintDelta,
    VimuState,
    predict_state,
    preintegrate,
    propagate_step,
)
from .simulation import (
    SimConfig,
    TrajectoryParams,
    grid_mounts,
    perturb_extrinsics,
    sample_trajectory,
    simulate_imu,
)
from .types import Extrinsic, ImuSeries, NoiseSpec
from .vimu import (
    FusionMatrices,
    VimuConfig,
    VimuNoise,
    VirtualSeries,
    build_fusion,
    fuse_accel,
    fuse_gyro,
    fuse_series,
    midpoint_frame,
    virtual_covariances,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryIndex",
    "CalibrationInput",
    "CalibrationResult",
    "DegenerateMotion",
    "EmptyOverlap",
    "ExperimentPlan",
    "Extrinsic",
    "FormatError",
    "FusionMatrices",
    "ImuSeries",
    "LengthMismatch",
    "MimuError",
    "NoiseSpec",
    "NotConverged",
    "PreintDelta",
    "RateMismatch",
    "RmseReport",
    "SimConfig",
    "SingularFusion",
    "SingularNormalEquations",
    "TrajectoryParams",
    "VimuConfig",
    "VimuNoise",
    "VimuState",
    "VirtualSeries",
    "WeightSchedule",
    "build_fusion",
    "calibrate",
    "estimate_angular_accel",
    "estimate_rotation",
    "estimate_translation",
    "fuse_accel",
    "fuse_gyro",
    "fuse_series",
    "grid_mounts",
    "ingest_csv",
    "midpoint_frame",
    "perturb_extrinsics",
    "predict_state",
    "preintegrate",
    "propagate_step",
    "run_experiment",
    "sample_trajectory",
    "simulate_imu",
    "virtual_covariances",
    "__version__",
]
