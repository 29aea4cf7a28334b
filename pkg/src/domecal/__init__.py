"""domecal: multi-camera intrinsics refinement with known extrinsics.

Refines per-camera intrinsics (and per-frame sparse geometry) of a fixed
multi-camera array from per-frame sparse reconstructions, using robust
bundle adjustment with a progressively stiffening pull toward the known
extrinsics, an optional dense-feature cost term, and a cross-frame
coupling that yields one consistent intrinsics set per camera.
"""
from .errors import (
    AlreadyTerminated,
    BehindCamera,
    DanglingReference,
    DegenerateConfiguration,
    DimensionMismatch,
    DomecalError,
    DuplicateKey,
    EmptyInput,
    InconsistentCamera,
    InvalidValue,
    IoFailure,
    KeyMismatch,
    MalformedHeader,
    MalformedLine,
    MissingCamera,
    NonUnitQuaternion,
    NumericalFailure,
    OutOfPatch,
    TruncatedFile,
    UnsupportedCameraModel,
)
from .features import (
    CostPatch,
    FeaturePatch,
    PatchStore,
    build_cost_patch,
    cost_lookup,
    interpolate_feature,
    load_patch_store,
    origin_for_keypoint,
    save_patch_store,
)
from .geometry import project, project_with_jacobians
from .metrics import (
    IntrinsicsErrors,
    build_report,
    camera_errors,
    frame_errors,
    multiframe_errors,
    render_table,
    report_to_json,
)
from .model import (
    Camera,
    Extrinsics,
    FrameModel,
    Intrinsics,
    Observation,
    Rig,
    TrackedPoint,
    mean_intrinsics,
    validate_rig,
)
from .objective import assemble, evaluate_objective
from .pipeline import (
    RunTrace,
    Schedule,
    advance,
    initialize_global_intrinsics,
    refine,
    refine_single_frame,
)
from .robust import RobustLoss, reference_feature, robust_mean
from .sparse_io import (
    RunConfig,
    load_config,
    load_rig,
    parse_config,
    parse_gt_extrinsics,
    parse_sparse_model,
    read_intrinsics_json,
    write_gt_extrinsics,
    write_intrinsics_json,
    write_sparse_model,
)
from .solver import Problem, ResidualBlock, SolveReport
from .synthetic import NoiseSpec, generate_dome, write_dataset

__version__ = "0.1.0"

__all__ = [
    "AlreadyTerminated",
    "BehindCamera",
    "Camera",
    "CostPatch",
    "DanglingReference",
    "DegenerateConfiguration",
    "DimensionMismatch",
    "DomecalError",
    "DuplicateKey",
    "EmptyInput",
    "Extrinsics",
    "FeaturePatch",
    "FrameModel",
    "InconsistentCamera",
    "Intrinsics",
    "IntrinsicsErrors",
    "InvalidValue",
    "IoFailure",
    "KeyMismatch",
    "MalformedHeader",
    "MalformedLine",
    "MissingCamera",
    "NoiseSpec",
    "NonUnitQuaternion",
    "NumericalFailure",
    "Observation",
    "OutOfPatch",
    "PatchStore",
    "Problem",
    "ResidualBlock",
    "Rig",
    "RobustLoss",
    "RunConfig",
    "RunTrace",
    "Schedule",
    "SolveReport",
    "TrackedPoint",
    "TruncatedFile",
    "UnsupportedCameraModel",
    "advance",
    "assemble",
    "build_cost_patch",
    "build_report",
    "camera_errors",
    "cost_lookup",
    "evaluate_objective",
    "frame_errors",
    "generate_dome",
    "initialize_global_intrinsics",
    "interpolate_feature",
    "load_config",
    "load_patch_store",
    "load_rig",
    "mean_intrinsics",
    "multiframe_errors",
    "origin_for_keypoint",
    "parse_config",
    "parse_gt_extrinsics",
    "parse_sparse_model",
    "project",
    "project_with_jacobians",
    "read_intrinsics_json",
    "reference_feature",
    "refine",
    "refine_single_frame",
    "render_table",
    "report_to_json",
    "robust_mean",
    "save_patch_store",
    "validate_rig",
    "write_dataset",
    "write_gt_extrinsics",
    "write_intrinsics_json",
    "write_sparse_model",
]
