"""Two-stage spatio-temporal grounding at desk scale.

Stage one scores every contiguous clip span of a video against a language
query on a trainable 2-D proposal grid (max-pool or Bi-LSTM aggregation,
optional concatenation augmentation during training) and decodes the best
span. Stage two turns the span into a spatio-temporal tube by rule-based
selection over externally supplied per-frame detections. A bit-exact
tIoU/vIoU harness evaluates the result.
"""

from .aggregators import AggregatorSpec, mfa_bilstm, mfa_maxpool
from .errors import MomentGridError
from .estimator import MomentGrounder
from .infer import decode_best_moment, ensemble_scores
from .metrics import box_iou, evaluate, temporal_iou, viou
from .model import ModelConfig, bce_loss, fuse_and_score, scaled_iou_targets, score_map
from .moments import build_moment_map, enumerate_proposals, validity_mask
from .rca import frame_rate_compatible, rca_augment
from .spatial import build_tube, count_persons, extract_subject, filter_detections, select_box
from .synthetic import order_discrimination_accuracy, synth_localization, synth_order_task
from .train import TrainConfig, TrainResult, train
from .types import (
    ClipFeatureSequence,
    DatasetManifest,
    Detection,
    FrameDetections,
    GroundingSample,
    MetricsReport,
    MomentMap,
    MomentPrediction,
    Proposal,
    QueryRecord,
    ScoreMap,
    Tube,
)

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec", "ClipFeatureSequence", "DatasetManifest", "Detection",
    "FrameDetections", "GroundingSample", "MetricsReport", "ModelConfig",
    "MomentGridError", "MomentGrounder", "MomentMap", "MomentPrediction",
    "Proposal", "QueryRecord", "ScoreMap", "TrainConfig", "TrainResult",
    "Tube", "bce_loss", "box_iou", "build_moment_map", "build_tube",
    "count_persons", "decode_best_moment", "ensemble_scores",
    "enumerate_proposals", "evaluate", "extract_subject", "filter_detections",
    "frame_rate_compatible", "fuse_and_score", "mfa_bilstm", "mfa_maxpool",
    "order_discrimination_accuracy", "rca_augment", "scaled_iou_targets",
    "score_map", "select_box", "synth_localization", "synth_order_task",
    "temporal_iou", "train", "validity_mask", "viou",
]
