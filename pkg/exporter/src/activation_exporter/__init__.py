"""Export CNN activations and topology in the formats pruneplan consumes."""

from .errors import (
    ExporterError,
    InsufficientSamples,
    ModelLoadError,
    UnsupportedOperator,
)
from .export import ExportConfig, export_activations, export_topology
from .models import available_models, load_model
from .tracing import LayerRecord, TracedNetwork, topology_document, trace_network

__version__ = "0.1.0"

__all__ = [
    "ExportConfig",
    "ExporterError",
    "InsufficientSamples",
    "LayerRecord",
    "ModelLoadError",
    "TracedNetwork",
    "UnsupportedOperator",
    "available_models",
    "export_activations",
    "export_topology",
    "load_model",
    "topology_document",
    "trace_network",
    "__version__",
]
