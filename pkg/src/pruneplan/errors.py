"""Exception hierarchy for the pruning planner.

Every error raised by this package derives from PlannerError so callers
(and the CLI) can catch one base class. ``exit_code`` is what the CLI
returns when the error escapes to the top level.
"""


class PlannerError(Exception):
    exit_code = 1


# activation dumps

class MissingFile(PlannerError):
    """Manifest or referenced layer file does not exist."""


class MagicMismatch(PlannerError):
    """Layer file does not start with the expected magic/version."""


class SampleCountMismatch(PlannerError):
    """Layers disagree on the sample count, or too few samples requested."""


class DtypeUnsupported(PlannerError):
    """Layer file declares a dtype tag this reader does not handle."""


class NonFiniteData(PlannerError):
    """Loaded activations contain NaN or infinite entries."""


class LayerNotFound(PlannerError):
    """Requested layer name is absent from the dump."""


# kernel statistics

class DegenerateInput(PlannerError):
    """Fewer than two samples; no kernel statistic is defined."""


class DimensionMismatch(PlannerError):
    """Operands disagree on sample count or vector length."""


class NotPositiveDefinite(PlannerError):
    """Assembled covariance block matrix is not symmetric positive definite."""


# network topology

class SchemaViolation(PlannerError):
    """Topology or manifest JSON does not satisfy the documented schema."""


class DanglingGroup(PlannerError):
    """A referenced channel group is produced by no layer."""


class DepthwiseGroupMismatch(PlannerError):
    """Depthwise layer whose input and output groups differ."""


# solving and planning

class InfeasibleBudget(PlannerError):
    """Budget is below the cost of the minimum-ratio architecture."""

    exit_code = 2


class UnmappedLayer(PlannerError):
    """A prunable layer has no importance entry."""


class RepairFailed(PlannerError):
    """Integer rounding repair could not reach the budget."""
