"""Dual-model correlation-filter tracker with adaptive score fusion."""

from .errors import (ConfigError, DataError, InvalidInputError,
                     NotAPeakError, NumericalError, ShapeError)
from .fusion import (FusionResult, evaluate_weights, extract_candidates,
                     fuse_and_select, solve_fusion_qp)
from .metrics import MetricReport, center_error, iou, success_metrics
from .quality import (FarMarginReport, ScoreMap, StateDistance,
                      curvature_bound, far_margin_check)
from .quality import quality as score_quality
from .report import SequenceRun, run_eval, run_sequence
from .sequences import (Sequence, SynthSpec, load_sequence, save_sequence,
                        synth_sequence)
from .tracker import TargetState, Tracker, TrackerConfig, initialize
from . import quality

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "InvalidInputError", "NotAPeakError",
    "NumericalError", "ShapeError",
    "FusionResult", "evaluate_weights", "extract_candidates",
    "fuse_and_select", "solve_fusion_qp",
    "MetricReport", "center_error", "iou", "success_metrics",
    "FarMarginReport", "ScoreMap", "StateDistance", "curvature_bound",
    "far_margin_check", "score_quality",
    "SequenceRun", "run_eval", "run_sequence",
    "Sequence", "SynthSpec", "load_sequence", "save_sequence",
    "synth_sequence",
    "TargetState", "Tracker", "TrackerConfig", "initialize",
    "__version__",
]
