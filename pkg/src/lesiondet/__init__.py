"""Numerical toolkit for small-lesion detection pipelines.

Framework-free building blocks: box geometry, a feature-gating module with
verified analytic gradients, size-adaptive label assignment, a COCO-style
average-precision evaluator, annotation ingestion with dataset statistics,
and a deterministic synthetic scenario generator, all behind a batch CLI.
"""

from .assignment import (
    AssignmentConfig,
    AssignmentResult,
    adaptive_threshold,
    alpha_schedule,
    assign_labels,
    dynamic_iou,
)
from .attention import (
    AttentionOutput,
    AttentionParams,
    forward,
    gradient_check,
    input_gradients,
)
from .dataio import (
    DatasetIndex,
    Scenario,
    StatsReport,
    area_ratio,
    compute_stats,
    load_coco,
    load_detections,
    patient_split,
    save_coco,
    synth_scenario,
)
from .errors import DimensionMismatchError, DomainError, SchemaError
from .geometry import BBox, area, iou, iou_matrix
from .metrics import (
    Detection,
    EvalReport,
    GroundTruth,
    average_precision,
    evaluate,
    match_detections,
)
from .tensor import BNParams, Conv1x1Params, FeatureMap, bn_inference, conv1x1, relu, sigmoid

__version__ = "0.1.0"

__all__ = [
    "AssignmentConfig",
    "AssignmentResult",
    "AttentionOutput",
    "AttentionParams",
    "BBox",
    "BNParams",
    "Conv1x1Params",
    "DatasetIndex",
    "Detection",
    "DimensionMismatchError",
    "DomainError",
    "EvalReport",
    "FeatureMap",
    "GroundTruth",
    "Scenario",
    "SchemaError",
    "StatsReport",
    "adaptive_threshold",
    "alpha_schedule",
    "area",
    "area_ratio",
    "assign_labels",
    "average_precision",
    "bn_inference",
    "compute_stats",
    "conv1x1",
    "dynamic_iou",
    "evaluate",
    "forward",
    "gradient_check",
    "input_gradients",
    "iou",
    "iou_matrix",
    "load_coco",
    "load_detections",
    "match_detections",
    "patient_split",
    "relu",
    "save_coco",
    "sigmoid",
    "synth_scenario",
]
