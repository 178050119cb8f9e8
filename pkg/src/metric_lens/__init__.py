"""Token-level saliency maps for reference-based MT evaluation metrics,
evaluated against gold error spans with AUC and Recall@K."""

from .core import (
    ErrorSpan,
    EvaluationInstance,
    Explanation,
    InputConfig,
    Method,
    ModelTrace,
    SegmentTag,
    Sentence,
    Severity,
    Subword,
    TracePosition,
    Word,
    tokenize,
    validate_trace,
)
from .encoder import (
    Architecture,
    EncoderConfig,
    MetricModel,
    finite_difference_grads,
    forward_with_trace,
    init_model,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "EncoderConfig",
    "ErrorSpan",
    "EvaluationInstance",
    "Explanation",
    "InputConfig",
    "Method",
    "MetricModel",
    "ModelTrace",
    "SegmentTag",
    "Sentence",
    "Severity",
    "Subword",
    "TracePosition",
    "Word",
    "finite_difference_grads",
    "forward_with_trace",
    "init_model",
    "tokenize",
    "validate_trace",
]
