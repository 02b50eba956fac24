"""End-to-end pruning pipeline: activations -> importances -> budgeted plan.

``plan`` wires the stages together: load the activation dump, build the
pairwise independence matrix over the topology's layers, convert row sums
to importances, solve for continuous keep ratios under the budget, then
round ratios to integer channel counts and repair any overshoot. The
result is a PruningPlan whose ``achieved_cost`` is recomputed from the
rounded channels with exact integer arithmetic — never from the quadratic
form — so the budget claim survives rounding.

``verify`` runs the estimator's invariance properties (scale, orthogonal
transformation, Gaussian-MI monotonicity) against a dump plus synthetic
controls, and ``report`` renders a plan as text, CSV, or JSON.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .activation_store import ActivationDump, load_layer, read_dump
from .errors import (DegenerateInput, LayerNotFound, NonFiniteData,
                     RepairFailed, SchemaViolation)
from .hsic_kernel import (LINEAR, KernelSpec, gaussian_mutual_information,
                          gram, nhsic)
from .importance_map import (ImportanceVector, build_independence_matrix,
                             importance)
from .net_model import (BUDGET_KINDS, ConstraintForm, NetworkDescription,
                        constraint_form, evaluate_cost, network_cost,
                        parse_network)
from .qcqp_solver import SolverResult, importance_to_groups, solve

PLAN_FORMAT_VERSION = 1
# Positive floor applied to all-degenerate groups so the solver's
# positivity precondition holds; such groups get minimal priority.
IMPORTANCE_FLOOR = 1e-12


@dataclass
class PruningPlan:
    """Rounded per-layer channel plan plus the settings that produced it."""

    ratios: dict[int, float]
    channels: dict[str, int]
    achieved_cost: int
    budget: float
    budget_kind: str
    meta: dict = field(default_factory=dict)

    @property
    def beta(self) -> float:
        return float(self.meta["beta"])

    @property
    def n_samples(self) -> int:
        return int(self.meta["n"])

    @property
    def full_cost(self) -> int:
        return int(self.meta["full_cost"])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def round_and_repair(alpha: np.ndarray, net: NetworkDescription,
                     form: ConstraintForm, budget: float, divisor: int,
                     group_importance: np.ndarray) -> dict[int, int]:
    """Round group ratios to channel counts; decrement until within budget.

    Rounding: kept = min(n_g, max(divisor, divisor * round(alpha * n_g /
    divisor))) with half-up rounding. If the exact integer recount exceeds
    the budget, the group with the smallest importance-per-unit-freed-cost
    is decremented by ``divisor`` (ties toward earlier topology order),
    recomputing the recount each step, never going below ``divisor``.
    """
    if divisor < 1:
        raise ValueError(f"divisor must be >= 1, got {divisor}")
    groups = form.group_order
    kept: dict[int, int] = {}
    for pos, g in enumerate(groups):
        n_g = net.group_channels[g]
        rounded = divisor * _round_half_up(float(alpha[pos]) * n_g / divisor)
        kept[g] = min(n_g, max(divisor, rounded))

    achieved = network_cost(net, form.budget_kind, kept)
    while achieved > budget:
        best_g = None
        best_score = np.inf
        for pos, g in enumerate(groups):
            if kept[g] - divisor < divisor or kept[g] - divisor < 1:
                continue
            trial = dict(kept)
            trial[g] = kept[g] - divisor
            freed = achieved - network_cost(net, form.budget_kind, trial)
            score = float(group_importance[pos]) / max(freed, 1)
            if score < best_score:
                best_score, best_g = score, g
        if best_g is None:
            raise RepairFailed(
                f"cannot meet budget {budget:g}: all groups already at the "
                f"divisor floor ({divisor}) with cost {achieved}")
        kept[best_g] -= divisor
        achieved = network_cost(net, form.budget_kind, kept)
    return kept


def _layer_channels(net: NetworkDescription, kept: dict[int, int]) -> dict[str, int]:
    return {layer.name: kept.get(layer.group_id, layer.out_channels)
            for layer in net.layers}


def plan(manifest: str | os.PathLike, topology: str | os.PathLike,
         budget_kind: str = "flops", budget_ratio: float | None = None,
         budget_abs: float | None = None, beta: float = 1.0,
         samples: int | None = None, kernel: KernelSpec | str = LINEAR,
         pooling: str = "flatten", alpha_min: float = 0.05,
         divisor: int = 1) -> PruningPlan:
    """Produce a pruning plan for the given dump, topology, and budget."""
    if budget_kind not in BUDGET_KINDS:
        raise ValueError(f"budget_kind must be one of {BUDGET_KINDS}, got {budget_kind!r}")
    if (budget_ratio is None) == (budget_abs is None):
        raise ValueError("give exactly one of budget_ratio or budget_abs")
    if isinstance(kernel, str):
        kernel = KernelSpec.parse(kernel)

    dump = read_dump(manifest)
    net = parse_network(topology)
    names = net.layer_names()
    missing = [n for n in names if n not in dump.layer_names()]
    if missing:
        raise LayerNotFound(
            f"topology layers missing from activation dump: {missing}")

    matrix = build_independence_matrix(dump, layer_names=names, kernel=kernel,
                                       pooling=pooling, samples=samples)
    imp = importance(matrix, beta)
    group_imp = importance_to_groups(imp, net, matrix.degenerate)
    solver_input = np.maximum(group_imp, IMPORTANCE_FLOOR)

    form = constraint_form(net, budget_kind)
    budget = (budget_ratio * form.full_cost if budget_ratio is not None
              else float(budget_abs))
    result = solve(solver_input, form, budget, alpha_min=alpha_min)

    kept = round_and_repair(result.alpha, net, form, budget, divisor, group_imp)
    channels = _layer_channels(net, kept)
    achieved = network_cost(net, budget_kind, kept)

    name_to_imp = dict(zip(imp.layer_names, imp.values))
    ratios = {g: float(result.alpha[pos]) for pos, g in enumerate(form.group_order)}
    layer_rows = []
    for layer in net.layers:
        prunable = layer.group_id in ratios
        layer_rows.append({
            "name": layer.name,
            "kind": layer.kind,
            "group": layer.group_id,
            "original": layer.out_channels,
            "kept": channels[layer.name],
            "alpha": ratios.get(layer.group_id, 1.0),
            "importance": float(name_to_imp[layer.name]),
            "degenerate": layer.name in matrix.degenerate,
            "prunable": prunable,
        })
    meta = {
        "beta": float(beta),
        "n": int(matrix.n),
        "kernel": str(kernel),
        "pooling": pooling,
        "alpha_min": float(alpha_min),
        "divisor": int(divisor),
        "full_cost": int(network_cost(net, budget_kind)),
        "versions": {"format": PLAN_FORMAT_VERSION, "pruneplan": __version__},
        "solver": {
            "status": result.status,
            "objective": float(result.objective),
            "constraint_value": float(result.constraint_value),
            "kkt_residual": float(result.kkt_residual),
            "lam": float(result.lam),
            "iterations": int(result.iterations),
        },
        "layers": layer_rows,
    }
    return PruningPlan(ratios=ratios, channels=channels,
                       achieved_cost=int(achieved), budget=float(budget),
                       budget_kind=budget_kind, meta=meta)


def plan_to_json(p: PruningPlan) -> str:
    doc = {
        "ratios": {str(g): v for g, v in p.ratios.items()},
        "channels": p.channels,
        "achieved_cost": p.achieved_cost,
        "budget": p.budget,
        "budget_kind": p.budget_kind,
        "meta": p.meta,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def plan_from_json(text: str) -> PruningPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"plan is not valid JSON: {exc}") from exc
    for key in ("ratios", "channels", "achieved_cost", "budget",
                "budget_kind", "meta"):
        if key not in doc:
            raise SchemaViolation(f"plan JSON missing key {key!r}")
    return PruningPlan(
        ratios={int(g): float(v) for g, v in doc["ratios"].items()},
        channels={str(k): int(v) for k, v in doc["channels"].items()},
        achieved_cost=int(doc["achieved_cost"]),
        budget=float(doc["budget"]),
        budget_kind=str(doc["budget_kind"]),
        meta=doc["meta"],
    )


def report(p: PruningPlan, fmt: str = "text") -> str:
    """Render a plan: per-layer table plus an ASCII channel profile."""
    if fmt == "json":
        return plan_to_json(p)
    rows = p.meta.get("layers", [])
    if fmt == "csv":
        lines = ["layer,kind,group,original,kept,alpha,importance,degenerate"]
        for r in rows:
            lines.append(",".join([
                r["name"], r["kind"], str(r["group"]), str(r["original"]),
                str(r["kept"]), "%.9g" % r["alpha"], "%.9g" % r["importance"],
                "1" if r["degenerate"] else "0",
            ]))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")

    name_w = max([len(r["name"]) for r in rows] + [5])
    lines = []
    ratio = p.achieved_cost / p.full_cost if p.full_cost else 0.0
    lines.append(f"budget kind      : {p.budget_kind}")
    lines.append(f"full cost        : {p.full_cost}")
    lines.append(f"budget           : {p.budget:g}")
    lines.append(f"achieved cost    : {p.achieved_cost}  ({ratio:.2%} of full)")
    solver = p.meta.get("solver", {})
    lines.append(f"solver status    : {solver.get('status', '?')}  "
                 f"(kkt residual {solver.get('kkt_residual', float('nan')):.2e})")
    lines.append(f"beta / samples   : {p.beta:g} / {p.n_samples}")
    lines.append(f"kernel / pooling : {p.meta.get('kernel')} / {p.meta.get('pooling')}")
    lines.append("")
    header = (f"{'layer':<{name_w}}  {'kind':<14}  {'orig':>5}  {'kept':>5}  "
              f"{'alpha':>7}  {'importance':>10}")
    lines.append(header)
    lines.append("-" * len(header))
    for r in rows:
        mark = " *" if r["degenerate"] else ""
        lines.append(f"{r['name']:<{name_w}}  {r['kind']:<14}  {r['original']:>5}  "
                     f"{r['kept']:>5}  {r['alpha']:>7.4f}  {r['importance']:>10.6f}{mark}")
    if any(r["degenerate"] for r in rows):
        lines.append("(* constant activations; independence treated as zero)")
    lines.append("")
    lines.append("kept channels per layer:")
    max_orig = max([r["original"] for r in rows] + [1])
    bar_w = 40
    for r in rows:
        filled = int(round(bar_w * r["kept"] / max_orig))
        lines.append(f"{r['name']:<{name_w}}  |{'#' * filled:<{bar_w}}| {r['kept']}")
    return "\n".join(lines) + "\n"


def _check(checks: list[dict], name: str, passed: bool, detail: str) -> None:
    checks.append({"name": name, "passed": bool(passed), "detail": detail})


def verify(manifest: str | os.PathLike, samples: int | None = None,
           pooling: str = "flatten") -> tuple[dict, bool]:
    """Run estimator invariance checks on a dump plus synthetic controls.

    Checks: finite payloads; nHSIC scale invariance (factors 1e-3, 1e3,
    tolerance 1e-10); orthogonal-transformation invariance (tolerance
    1e-8); Gaussian mutual information and sample nHSIC both monotone in
    the cross-covariance scale on synthetic 2-D controls. Degenerate
    (constant) layers are reported but do not fail verification.
    """
    dump = read_dump(manifest)
    checks: list[dict] = []
    degenerate: list[str] = []

    loaded = {}
    finite_ok, finite_detail = True, "all payloads finite"
    for name in dump.layer_names():
        try:
            loaded[name] = load_layer(dump, name, pooling=pooling,
                                      samples=samples)
        except NonFiniteData as exc:
            finite_ok, finite_detail = False, str(exc)
    _check(checks, "finite-data", finite_ok, finite_detail)

    feats = {}
    for name, mat in loaded.items():
        x = mat.data.astype(np.float64)
        k = gram(x)
        if k.is_degenerate():
            degenerate.append(name)
        else:
            feats[name] = x

    names = sorted(feats)
    pairs = [(names[i], names[j]) for i in range(len(names))
             for j in range(i + 1, len(names))][:12]
    if pairs:
        rng = np.random.default_rng(0)
        worst_scale = 0.0
        worst_orth = 0.0
        for a, b in pairs:
            ka, kb = gram(feats[a]), gram(feats[b])
            base = nhsic(ka, kb)
            for factor in (1e-3, 1e3):
                worst_scale = max(worst_scale,
                                  abs(nhsic(gram(factor * feats[a]), kb) - base))
            # Rotate a leading block of the feature space: block + identity
            # is orthogonal too, and stays cheap for wide conv layers.
            d = min(feats[a].shape[1], 64)
            u, _ = np.linalg.qr(rng.standard_normal((d, d)))
            rotated = feats[a].copy()
            rotated[:, :d] = feats[a][:, :d] @ u
            worst_orth = max(worst_orth,
                             abs(nhsic(gram(rotated), kb) - base))
        _check(checks, "scale-invariance", worst_scale <= 1e-10,
               f"max deviation {worst_scale:.3e} over {len(pairs)} pairs (tol 1e-10)")
        _check(checks, "orthogonal-invariance", worst_orth <= 1e-8,
               f"max deviation {worst_orth:.3e} over {len(pairs)} pairs (tol 1e-8)")
    else:
        _check(checks, "scale-invariance", False,
               "fewer than 2 non-degenerate layers; nothing to compare")
        _check(checks, "orthogonal-invariance", False,
               "fewer than 2 non-degenerate layers; nothing to compare")

    # Synthetic control: dependence grows with the cross-covariance scale.
    rng = np.random.default_rng(1)
    n_ctl = 800
    sigma0 = 0.9 * np.eye(2)
    t_grid = (0.0, 0.3, 0.6, 0.9)
    mi_vals, nh_vals = [], []
    for t in t_grid:
        cov = np.block([[np.eye(2), t * sigma0], [t * sigma0, np.eye(2)]])
        mi_vals.append(gaussian_mutual_information(np.eye(2), np.eye(2), t * sigma0))
        z = rng.multivariate_normal(np.zeros(4), cov, size=n_ctl)
        nh_vals.append(nhsic(gram(z[:, :2]), gram(z[:, 2:])))
    mi_mono = all(mi_vals[k + 1] >= mi_vals[k] for k in range(len(t_grid) - 1))
    nh_mono = all(nh_vals[k + 1] >= nh_vals[k] - 0.01 for k in range(len(t_grid) - 1))
    _check(checks, "gaussian-mi-monotone", mi_mono,
           "MI values " + ", ".join(f"{v:.4f}" for v in mi_vals))
    _check(checks, "nhsic-tracks-dependence", nh_mono and nh_vals[0] < 0.05,
           "nHSIC values " + ", ".join(f"{v:.4f}" for v in nh_vals))

    passed = all(c["passed"] for c in checks)
    return ({"checks": checks, "degenerate": degenerate, "passed": passed},
            passed)
