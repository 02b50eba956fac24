"""Training-free channel-pruning planner driven by activation independence.

Given per-layer activation samples from a pretrained CNN and a FLOPs or
parameter budget, the planner scores each layer by how statistically
redundant its activations are (normalized HSIC against every other layer),
then solves a budgeted allocation problem for per-layer keep ratios and
rounds them to integer channel counts. No training, no search.
"""

__version__ = "0.1.0"

from .activation_store import (ActivationDump, ActivationMatrix, LayerEntry,
                               load_layer, read_dump, read_layer, write_dump,
                               write_layer, write_manifest)
from .errors import (DanglingGroup, DegenerateInput, DepthwiseGroupMismatch,
                     DimensionMismatch, DtypeUnsupported, InfeasibleBudget,
                     LayerNotFound, MagicMismatch, MissingFile, NonFiniteData,
                     NotPositiveDefinite, PlannerError, RepairFailed,
                     SampleCountMismatch, SchemaViolation, UnmappedLayer)
from .hsic_kernel import (GramMatrix, KernelSpec, gaussian_mutual_information,
                          gram, hsic, median_bandwidth, nhsic, nhsic_features,
                          nhsic_pair)
from .importance_map import (ImportanceVector, IndependenceMatrix,
                             build_independence_matrix, importance,
                             importance_sweep, independence_csv,
                             independence_json, independence_report)
from .net_model import (ConstraintForm, LayerSpec, NetworkDescription,
                        constraint_form, evaluate_cost, layer_cost,
                        network_cost, parse_network)
from .planner import (PruningPlan, plan, plan_from_json, plan_to_json, report,
                      round_and_repair, verify)
from .qcqp_solver import SolverResult, importance_to_groups, solve

__all__ = [
    "__version__",
    "ActivationDump", "ActivationMatrix", "LayerEntry",
    "load_layer", "read_dump", "read_layer",
    "write_dump", "write_layer", "write_manifest",
    "PlannerError", "MissingFile", "MagicMismatch", "SampleCountMismatch",
    "DtypeUnsupported", "NonFiniteData", "LayerNotFound", "DegenerateInput",
    "DimensionMismatch", "NotPositiveDefinite", "SchemaViolation",
    "DanglingGroup", "DepthwiseGroupMismatch", "InfeasibleBudget",
    "UnmappedLayer", "RepairFailed",
    "KernelSpec", "GramMatrix", "gram", "hsic", "nhsic", "nhsic_features",
    "nhsic_pair", "median_bandwidth", "gaussian_mutual_information",
    "IndependenceMatrix", "ImportanceVector", "build_independence_matrix",
    "importance", "importance_sweep", "independence_report",
    "independence_csv", "independence_json",
    "LayerSpec", "NetworkDescription", "ConstraintForm", "parse_network",
    "constraint_form", "evaluate_cost", "layer_cost", "network_cost",
    "SolverResult", "solve", "importance_to_groups",
    "PruningPlan", "plan", "round_and_repair", "verify", "report",
    "plan_to_json", "plan_from_json",
]
