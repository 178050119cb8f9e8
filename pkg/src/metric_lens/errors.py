"""Exception hierarchy shared across the toolkit."""


class MetricLensError(Exception):
    """Base class for all toolkit errors."""


class EmptyInput(MetricLensError):
    """Raised when a sentence to tokenize is empty."""


class ConfigError(MetricLensError):
    """Invalid model or run configuration."""


class MissingSegment(MetricLensError):
    """An input configuration requires a segment the instance lacks."""


class ShapeError(MetricLensError):
    """Tensor or score-vector lengths disagree."""


class SpanError(MetricLensError):
    """An error span lies outside the sentence bounds."""


class ParseError(MetricLensError):
    """Malformed annotation markup. Carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(MetricLensError):
    """Input file is missing required columns."""


class TraceFormatError(MetricLensError):
    """Trace directory contents disagree with the manifest."""


class NoCorruptionSite(MetricLensError):
    """The corruption rule finds nothing to edit in this translation."""


class InsufficientDonor(MetricLensError):
    """Donor corpus too short to sample a hallucination n-gram."""


class InsufficientDevData(MetricLensError):
    """No development sentence yields a defined AUC for head selection."""
