"""Exporter error hierarchy."""


class ExporterError(Exception):
    """Base class for all exporter failures."""


class ModelLoadError(ExporterError):
    """Unknown model identifier, or the model could not be constructed."""


class InsufficientSamples(ExporterError):
    """The data source yields fewer images than the requested sample count."""


class UnsupportedOperator(ExporterError):
    """The traced graph contains an operator the topology model cannot express."""
