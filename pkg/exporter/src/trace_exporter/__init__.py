from .checkpoint import MetricCheckpoint, create_checkpoint, load_checkpoint
from .export import ExportJob, ExportUnsupported, export_instance, export_traces

__all__ = [
    "MetricCheckpoint",
    "create_checkpoint",
    "load_checkpoint",
    "ExportJob",
    "ExportUnsupported",
    "export_instance",
    "export_traces",
]

__version__ = "0.1.0"
