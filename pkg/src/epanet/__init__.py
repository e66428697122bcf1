"""EPANet: an efficient path-aggregation detector with verifiable numerics."""

from .blocks import (
    BlockConfig,
    Bottleneck,
    BranchStats,
    C2f,
    ConvBNSiLU,
    MSC2f,
    MSDDSPBottleneck,
    channel_soft_attention,
)
from .data import (
    GroundTruthBox,
    Sample,
    letterbox,
    load_yolo_dataset,
    synth_dataset,
)
from .detector import (
    Detection,
    DetectorConfig,
    EPANet,
    compute_loss,
    decode_predictions,
    load_checkpoint,
    save_checkpoint,
)
from .errors import ConfigurationError, NumericError
from .metrics import EvalReport, average_precision, evaluate, iou, match_detections
from .profiler import ProfileReport, profile_model
from .pyramid import (
    FusionEdge,
    FusionGraph,
    FusionGraphSpec,
    FusionNode,
    build_graph,
    count_params,
    preset_topology,
)
from .train import TrainConfig, evaluate_model, seed_init, train_model

__version__ = "0.1.0"

__all__ = [
    "BlockConfig",
    "Bottleneck",
    "BranchStats",
    "C2f",
    "ConvBNSiLU",
    "MSC2f",
    "MSDDSPBottleneck",
    "channel_soft_attention",
    "GroundTruthBox",
    "Sample",
    "letterbox",
    "load_yolo_dataset",
    "synth_dataset",
    "Detection",
    "DetectorConfig",
    "EPANet",
    "compute_loss",
    "decode_predictions",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigurationError",
    "NumericError",
    "EvalReport",
    "average_precision",
    "evaluate",
    "iou",
    "match_detections",
    "ProfileReport",
    "profile_model",
    "FusionEdge",
    "FusionGraph",
    "FusionGraphSpec",
    "FusionNode",
    "build_graph",
    "count_params",
    "preset_topology",
    "TrainConfig",
    "evaluate_model",
    "seed_init",
    "train_model",
    "__version__",
]
