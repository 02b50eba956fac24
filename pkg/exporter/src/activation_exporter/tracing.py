"""Model-graph analysis: prunable layers, shapes, and channel groups.

The model is symbolically traced with ``torch.fx`` and shapes come from a
tracing forward pass.  Every convolution and linear layer becomes a
topology entry; channel-sharing groups are derived conservatively — tensors
merged by addition (residual connections) force their producing layers into
one group, and depthwise convolutions stay in their input's group.  The
group feeding the model output is marked non-prunable, since its width is
fixed by the task.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

import torch
from torch import fx, nn
from torch.nn import functional as F
from torch.fx.passes.shape_prop import ShapeProp

from .errors import ModelLoadError, UnsupportedOperator

_ACTIVATION_MODULES = (nn.ReLU, nn.ReLU6, nn.LeakyReLU, nn.GELU, nn.SiLU,
                       nn.Sigmoid, nn.Tanh, nn.Hardswish)
_TRANSPARENT_MODULES = _ACTIVATION_MODULES + (
    nn.BatchNorm1d, nn.BatchNorm2d, nn.Dropout, nn.Identity,
    nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d, nn.AdaptiveMaxPool2d,
    nn.Flatten,
)
_ACTIVATION_FUNCTIONS = {torch.relu, F.relu, F.relu6, F.gelu, F.silu,
                         torch.sigmoid, F.sigmoid, torch.tanh, F.tanh}
_TRANSPARENT_FUNCTIONS = _ACTIVATION_FUNCTIONS | {
    torch.flatten, F.adaptive_avg_pool2d, F.max_pool2d, F.avg_pool2d,
    F.dropout,
}
_ACTIVATION_METHODS = {"relu", "sigmoid", "tanh"}
_TRANSPARENT_METHODS = _ACTIVATION_METHODS | {"flatten", "contiguous"}
_ADD_TARGETS = {operator.add, torch.add}


@dataclass(frozen=True)
class LayerRecord:
    """One prunable layer as the planner's topology schema describes it."""

    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: int
    out_h: int
    out_w: int
    group: int
    input_group: int
    capture_node: str


@dataclass(frozen=True)
class TracedNetwork:
    layers: tuple[LayerRecord, ...]
    non_prunable_groups: tuple[int, ...]
    graph_module: fx.GraphModule
    capture_nodes: dict[str, str]  # graph node name -> layer name

    def layer_names(self) -> tuple[str, ...]:
        return tuple(rec.name for rec in self.layers)


def _tensor_args(node: fx.Node) -> list[fx.Node]:
    found: list[fx.Node] = []

    def visit(arg: object) -> None:
        if isinstance(arg, fx.Node):
            found.append(arg)
        elif isinstance(arg, (tuple, list)):
            for item in arg:
                visit(item)

    for arg in node.args:
        visit(arg)
    for arg in node.kwargs.values():
        visit(arg)
    return found


def _node_shape(node: fx.Node) -> tuple[int, ...]:
    meta = node.meta.get("tensor_meta")
    if meta is None:
        raise UnsupportedOperator(
            f"no shape information for node '{node.name}'")
    return tuple(meta.shape)


def _is_activation(gm: fx.GraphModule, node: fx.Node) -> bool:
    if node.op == "call_module":
        return isinstance(gm.get_submodule(node.target), _ACTIVATION_MODULES)
    if node.op == "call_function":
        return node.target in _ACTIVATION_FUNCTIONS
    if node.op == "call_method":
        return node.target in _ACTIVATION_METHODS
    return False


def trace_network(model: nn.Module, resolution: int,
                  capture: str = "post_activation") -> TracedNetwork:
    """Trace a model and derive the planner topology plus capture points."""
    if capture not in ("post_activation", "module_output"):
        raise ValueError(f"unknown capture mode {capture!r}")
    try:
        gm = fx.symbolic_trace(model)
    except Exception as exc:
        raise ModelLoadError(f"model cannot be traced: {exc}") from exc
    ShapeProp(gm).propagate(torch.zeros(1, 3, resolution, resolution))

    # Union-find over group tokens; one token per channel-producing layer.
    parent: list[int] = []

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> int:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
        return min(ra, rb)

    def new_token() -> int:
        parent.append(len(parent))
        return len(parent) - 1

    carrier: dict[fx.Node, int | None] = {}
    pending: list[tuple[fx.Node, nn.Module, str, int, int | None]] = []
    output_token: int | None = None

    for node in gm.graph.nodes:
        if node.op in ("placeholder", "get_attr"):
            carrier[node] = None
            continue
        if node.op == "output":
            outs = _tensor_args(node)
            output_token = carrier.get(outs[0]) if outs else None
            continue
        inputs = _tensor_args(node)
        if node.op == "call_module":
            mod = gm.get_submodule(node.target)
            src = carrier[inputs[0]] if inputs else None
            if isinstance(mod, nn.Conv2d):
                if mod.kernel_size[0] != mod.kernel_size[1]:
                    raise UnsupportedOperator(
                        f"non-square kernel at layer '{node.target}'")
                if mod.groups == 1:
                    token = new_token()
                    kind = "conv"
                elif mod.groups == mod.in_channels == mod.out_channels:
                    if src is None:
                        raise UnsupportedOperator(
                            f"depthwise layer '{node.target}' consumes the "
                            f"network input, whose channels cannot be pruned")
                    token = src
                    kind = "depthwise_conv"
                else:
                    raise UnsupportedOperator(
                        f"grouped convolution at layer '{node.target}' "
                        f"(groups={mod.groups}) is not depthwise")
                carrier[node] = token
                pending.append((node, mod, kind, token, src))
            elif isinstance(mod, nn.Linear):
                token = new_token()
                carrier[node] = token
                pending.append((node, mod, "linear", token,
                                carrier[inputs[0]] if inputs else None))
            elif isinstance(mod, _TRANSPARENT_MODULES):
                carrier[node] = carrier[inputs[0]] if inputs else None
            else:
                raise UnsupportedOperator(
                    f"unsupported module {type(mod).__name__} at layer "
                    f"'{node.target}'")
        elif node.op == "call_function":
            if node.target in _ADD_TARGETS and len(inputs) == 2:
                ga, gb = carrier[inputs[0]], carrier[inputs[1]]
                if ga is None or gb is None:
                    raise UnsupportedOperator(
                        f"addition at node '{node.name}' mixes a layer output "
                        f"with the network input")
                carrier[node] = union(ga, gb)
            elif (node.target in _TRANSPARENT_FUNCTIONS
                  or node.target in _ADD_TARGETS) and len(inputs) == 1:
                carrier[node] = carrier[inputs[0]]
            else:
                name = getattr(node.target, "__name__", str(node.target))
                raise UnsupportedOperator(
                    f"unsupported operator '{name}' at node '{node.name}'")
        elif node.op == "call_method":
            if node.target in _TRANSPARENT_METHODS and inputs:
                carrier[node] = carrier[inputs[0]]
            else:
                raise UnsupportedOperator(
                    f"unsupported method '{node.target}' at node '{node.name}'")
        else:  # pragma: no cover - fx has no other opcodes
            raise UnsupportedOperator(f"unsupported node kind '{node.op}'")

    # Compress union-find roots into sequential group ids, forward order.
    group_ids: dict[int, int] = {}

    def group_id(token: int) -> int:
        root = find(token)
        if root not in group_ids:
            group_ids[root] = len(group_ids) + 1
        return group_ids[root]

    records: list[LayerRecord] = []
    capture_nodes: dict[str, str] = {}
    for node, mod, kind, token, src in pending:
        shape = _node_shape(node)
        if isinstance(mod, nn.Conv2d):
            in_ch, out_ch, k = mod.in_channels, mod.out_channels, mod.kernel_size[0]
            out_h, out_w = int(shape[2]), int(shape[3])
        else:
            in_ch, out_ch, k = mod.in_features, mod.out_features, 1
            out_h = out_w = 1
        capture_node = node
        if capture == "post_activation":
            while (len(capture_node.users) == 1
                   and _is_activation(gm, next(iter(capture_node.users)))):
                capture_node = next(iter(capture_node.users))
        name = str(node.target)
        records.append(LayerRecord(
            name=name, kind=kind, in_channels=in_ch, out_channels=out_ch,
            kernel=int(k), out_h=out_h, out_w=out_w, group=group_id(token),
            input_group=-1 if src is None else group_id(src),
            capture_node=capture_node.name))
        capture_nodes[capture_node.name] = name

    non_prunable: tuple[int, ...] = ()
    if output_token is not None:
        non_prunable = (group_id(output_token),)
    return TracedNetwork(layers=tuple(records),
                         non_prunable_groups=non_prunable,
                         graph_module=gm, capture_nodes=capture_nodes)


def topology_document(traced: TracedNetwork) -> dict[str, object]:
    """The traced structure in the planner's topology JSON schema."""
    return {
        "layers": [
            {
                "name": rec.name, "kind": rec.kind, "in": rec.in_channels,
                "out": rec.out_channels, "k": rec.kernel, "out_h": rec.out_h,
                "out_w": rec.out_w, "group": rec.group,
                "input_group": rec.input_group,
            }
            for rec in traced.layers
        ],
        "non_prunable_groups": list(traced.non_prunable_groups),
    }
