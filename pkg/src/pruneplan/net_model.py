"""Network topology model and the resource-constraint quadratic form.

The planner never touches framework checkpoints; it consumes a small JSON
description of the conv/linear stack:

    {
      "layers": [
        {"name": "conv1", "kind": "conv", "in": 3, "out": 16, "k": 3,
         "out_h": 32, "out_w": 32, "group": 1, "input_group": -1},
        ...
      ],
      "non_prunable_groups": [4]
    }

``group`` is the channel-sharing group of the layer's OUTPUT; layers whose
outputs are summed (residual adds) must share a group so they are pruned in
lockstep. ``input_group`` names the group feeding the layer, with -1 for
the raw network input (never pruned).

With keep-ratios alpha per prunable group and the augmented vector
abar = (1, alpha), every FLOPs/params budget is the quadratic form
abar^T T abar: a conv costs out*in*k^2 (*out_h*out_w for FLOPs), which is
bilinear in the input and output groups' ratios; depthwise convs cost
out*k^2 (*h*w), linear in their single ratio, so their mass pairs with the
constant index 0. Non-prunable groups fold into index 0 as well.

``network_cost`` recounts the same totals with plain integer arithmetic
and never touches T; it is the honesty check for rounded plans.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (DanglingGroup, DepthwiseGroupMismatch, DimensionMismatch,
                     MissingFile, SchemaViolation)

LAYER_KINDS = ("conv", "depthwise_conv", "linear")
BUDGET_KINDS = ("flops", "params")


@dataclass(frozen=True)
class LayerSpec:
    """One weight layer: shape, output placement, and group wiring."""

    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: int
    out_h: int
    out_w: int
    group_id: int
    input_group_id: int


@dataclass(frozen=True)
class NetworkDescription:
    """Validated layer list plus the resolved channel-sharing group graph."""

    layers: tuple[LayerSpec, ...]
    group_channels: dict[int, int]
    prunable_groups: tuple[int, ...]
    non_prunable_groups: frozenset[int]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise SchemaViolation(f"no layer named {name!r} in topology")

    def group_members(self, group_id: int) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers if l.group_id == group_id)

    def layer_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.layers)


@dataclass(frozen=True)
class ConstraintForm:
    """(G+1) x (G+1) symmetric nonnegative quadratic form over (1, alpha)."""

    t_matrix: np.ndarray
    budget_kind: str
    full_cost: float
    group_order: tuple[int, ...]

    @property
    def n_groups(self) -> int:
        return len(self.group_order)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise SchemaViolation(message)


def _positive_int(entry: dict, key: str, where: str) -> int:
    value = entry.get(key)
    _require(isinstance(value, int) and not isinstance(value, bool) and value > 0,
             f"{where}: {key!r} must be a positive integer, got {value!r}")
    return value


def parse_network(path: str | os.PathLike) -> NetworkDescription:
    """Load and validate a topology JSON file.

    Checks performed: schema shape and value ranges; unique layer names;
    depthwise layers keep their channel count and group (in == out,
    group == input_group); every referenced input group is produced by
    some layer; group members agree on out_channels; each layer's
    in_channels is the producing group's channel count (an integer
    multiple for linear layers, which may consume flattened spatial maps).
    """
    if not os.path.isfile(path):
        raise MissingFile(f"topology file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"topology is not valid JSON: {exc}") from exc

    _require(isinstance(doc, dict), "topology root must be a JSON object")
    raw_layers = doc.get("layers")
    _require(isinstance(raw_layers, list) and raw_layers,
             "topology must contain a non-empty 'layers' list")
    raw_np = doc.get("non_prunable_groups", [])
    _require(isinstance(raw_np, list) and all(
        isinstance(g, int) and not isinstance(g, bool) for g in raw_np),
        "'non_prunable_groups' must be a list of integers")

    layers: list[LayerSpec] = []
    seen_names: set[str] = set()
    for pos, entry in enumerate(raw_layers):
        where = f"layers[{pos}]"
        _require(isinstance(entry, dict), f"{where}: must be an object")
        name = entry.get("name")
        _require(isinstance(name, str) and name, f"{where}: 'name' must be a non-empty string")
        _require(name not in seen_names, f"duplicate layer name {name!r}")
        seen_names.add(name)
        kind = entry.get("kind")
        _require(kind in LAYER_KINDS,
                 f"{where}: 'kind' must be one of {LAYER_KINDS}, got {kind!r}")
        c_in = _positive_int(entry, "in", where)
        c_out = _positive_int(entry, "out", where)
        k = _positive_int(entry, "k", where)
        out_h = _positive_int(entry, "out_h", where)
        out_w = _positive_int(entry, "out_w", where)
        group = entry.get("group")
        _require(isinstance(group, int) and not isinstance(group, bool) and group >= 0,
                 f"{where}: 'group' must be a non-negative integer, got {group!r}")
        input_group = entry.get("input_group")
        _require(isinstance(input_group, int) and not isinstance(input_group, bool)
                 and input_group >= -1,
                 f"{where}: 'input_group' must be an integer >= -1, got {input_group!r}")
        if kind == "linear":
            _require(k == 1 and out_h == 1 and out_w == 1,
                     f"{where}: linear layers must have k = out_h = out_w = 1")
        if kind == "depthwise_conv":
            if c_in != c_out or group != input_group:
                raise DepthwiseGroupMismatch(
                    f"{where}: depthwise layer {name!r} must keep its channel count "
                    f"and group (in == out, group == input_group)")
        layers.append(LayerSpec(name=name, kind=kind, in_channels=c_in,
                                out_channels=c_out, kernel=k, out_h=out_h,
                                out_w=out_w, group_id=group,
                                input_group_id=input_group))

    group_channels: dict[int, int] = {}
    group_first_pos: dict[int, int] = {}
    for pos, layer in enumerate(layers):
        got = group_channels.setdefault(layer.group_id, layer.out_channels)
        group_first_pos.setdefault(layer.group_id, pos)
        _require(got == layer.out_channels,
                 f"group {layer.group_id} members disagree on out_channels "
                 f"({got} vs {layer.out_channels} at layer {layer.name!r})")

    for layer in layers:
        g_in = layer.input_group_id
        if g_in == -1:
            continue
        if g_in not in group_channels:
            raise DanglingGroup(
                f"layer {layer.name!r} consumes group {g_in}, "
                f"which no layer produces")
        n_in = group_channels[g_in]
        if layer.kind == "linear":
            _require(layer.in_channels % n_in == 0,
                     f"linear layer {layer.name!r} has in={layer.in_channels}, "
                     f"not a multiple of feeding group {g_in}'s {n_in} channels")
        else:
            _require(layer.in_channels == n_in,
                     f"layer {layer.name!r} has in={layer.in_channels} but feeding "
                     f"group {g_in} carries {n_in} channels")

    non_prunable = frozenset(raw_np)
    for g in non_prunable:
        if g not in group_channels:
            raise DanglingGroup(f"non_prunable group {g} has no member layer")

    prunable = tuple(sorted((g for g in group_channels if g not in non_prunable),
                            key=group_first_pos.__getitem__))
    return NetworkDescription(layers=tuple(layers), group_channels=group_channels,
                              prunable_groups=prunable,
                              non_prunable_groups=non_prunable)


def layer_cost(layer: LayerSpec, kind: str,
               in_channels: int | None = None,
               out_channels: int | None = None) -> int:
    """Textbook weight-tensor cost of one layer, exact integer arithmetic.

    conv/linear: out*in*k^2 (FLOPs additionally *out_h*out_w);
    depthwise:   out*k^2   (FLOPs additionally *out_h*out_w).
    Bias/batch-norm/activation terms are deliberately excluded.
    """
    if kind not in BUDGET_KINDS:
        raise ValueError(f"budget kind must be one of {BUDGET_KINDS}, got {kind!r}")
    c_in = layer.in_channels if in_channels is None else in_channels
    c_out = layer.out_channels if out_channels is None else out_channels
    spatial = layer.out_h * layer.out_w if kind == "flops" else 1
    if layer.kind == "depthwise_conv":
        return c_out * layer.kernel ** 2 * spatial
    return c_out * c_in * layer.kernel ** 2 * spatial


def network_cost(net: NetworkDescription, kind: str,
                 kept: dict[int, int] | None = None) -> int:
    """Total network cost, optionally with per-group kept channel counts.

    Independent of ConstraintForm by design: sums layer_cost over layers,
    propagating kept counts through the group graph (a linear layer fed by
    a pruned group keeps the per-channel multiplier in_channels / n_group).
    """
    total = 0
    for layer in net.layers:
        out_eff = layer.out_channels
        if kept is not None and layer.group_id in kept:
            out_eff = kept[layer.group_id]
        g_in = layer.input_group_id
        in_eff = layer.in_channels
        if kept is not None and g_in != -1 and g_in in kept:
            in_eff = (layer.in_channels // net.group_channels[g_in]) * kept[g_in]
        total += layer_cost(layer, kind, in_channels=in_eff, out_channels=out_eff)
    return total


def constraint_form(net: NetworkDescription, kind: str) -> ConstraintForm:
    """Assemble the budget quadratic form T for the given resource kind.

    Each conv/linear layer's full cost lands half on (input_index,
    output_index) and half on the transpose; depthwise layers pair their
    group with the constant index 0. Non-prunable groups and the network
    input map to index 0, so their cost terms degrade gracefully into
    linear/constant contributions.
    """
    if kind not in BUDGET_KINDS:
        raise ValueError(f"budget kind must be one of {BUDGET_KINDS}, got {kind!r}")
    index = {-1: 0}
    for g in net.non_prunable_groups:
        index[g] = 0
    for pos, g in enumerate(net.prunable_groups):
        index[g] = pos + 1

    size = len(net.prunable_groups) + 1
    t = np.zeros((size, size), dtype=np.float64)
    full = 0
    for layer in net.layers:
        cost = layer_cost(layer, kind)
        full += cost
        if layer.kind == "depthwise_conv":
            a, b = 0, index[layer.group_id]
        else:
            a, b = index[layer.input_group_id], index[layer.group_id]
        t[a, b] += cost / 2.0
        t[b, a] += cost / 2.0
    return ConstraintForm(t_matrix=t, budget_kind=kind, full_cost=float(full),
                          group_order=net.prunable_groups)


def evaluate_cost(form: ConstraintForm, alpha: np.ndarray) -> float:
    """abar^T T abar with abar = (1, alpha)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (form.n_groups,):
        raise DimensionMismatch(
            f"alpha must have length {form.n_groups}, got shape {alpha.shape}")
    abar = np.concatenate(([1.0], alpha))
    return float(abar @ form.t_matrix @ abar)
