"""Command-line interface.

Subcommands:
  plan    full pipeline: dump + topology + budget -> plan JSON + report
  hsic    emit the layer-independence matrix (CSV or JSON) only
  verify  run estimator invariance checks against a dump
  report  re-render a previously written plan JSON

Exit codes: 0 success, 1 any planner error or failed verification,
2 infeasible budget.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import PlannerError
from .hsic_kernel import KernelSpec
from .importance_map import (build_independence_matrix, independence_csv,
                             independence_json)
from .activation_store import read_dump
from .planner import plan, plan_from_json, plan_to_json, report, verify


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _add_dump_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="activation dump manifest JSON")
    p.add_argument("--samples", type=int, default=None,
                   help="use only the first N samples (default: all)")
    p.add_argument("--kernel", default="linear",
                   help="kernel: linear, rbf, or rbf:<bandwidth> (default linear)")
    p.add_argument("--pooling", default="flatten",
                   choices=("flatten", "spatial_mean"),
                   help="how 4-D activations become sample vectors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pruneplan",
        description="Training-free channel-pruning planner: activation "
                    "independence in, per-layer channel counts out.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="compute a pruning plan")
    _add_dump_flags(p_plan)
    p_plan.add_argument("--topology", required=True, help="network topology JSON")
    p_plan.add_argument("--budget-kind", default="flops",
                        help="resource to constrain: flops or params")
    group = p_plan.add_mutually_exclusive_group(required=True)
    group.add_argument("--budget-ratio", type=float,
                       help="budget as a fraction of the full cost")
    group.add_argument("--budget-abs", type=float,
                       help="budget as an absolute cost value")
    p_plan.add_argument("--beta", type=float, default=1.0,
                        help="importance sharpness (default 1.0)")
    p_plan.add_argument("--alpha-min", type=float, default=0.05,
                        help="lower bound on keep ratios (default 0.05)")
    p_plan.add_argument("--divisor", type=int, default=1,
                        help="channel counts are multiples of this (default 1)")
    p_plan.add_argument("--out", default="plan.json",
                        help="where to write the plan JSON (default plan.json)")
    p_plan.add_argument("--format", default="text",
                        choices=("text", "csv", "json"),
                        help="report format printed to stdout")

    p_hsic = sub.add_parser("hsic", help="emit the layer-independence matrix")
    _add_dump_flags(p_hsic)
    p_hsic.add_argument("--out", default=None, help="output file (default stdout)")
    p_hsic.add_argument("--format", default="csv", choices=("csv", "json"))

    p_verify = sub.add_parser("verify", help="run estimator invariance checks")
    _add_dump_flags(p_verify)
    p_verify.add_argument("--out", default=None,
                          help="also write the JSON report here")

    p_report = sub.add_parser("report", help="render a plan JSON")
    p_report.add_argument("plan_file", help="plan JSON written by `plan`")
    p_report.add_argument("--format", default="text",
                          choices=("text", "csv", "json"))
    p_report.add_argument("--out", default=None, help="output file (default stdout)")
    return parser


def _cmd_plan(args: argparse.Namespace) -> int:
    if args.budget_kind == "latency":
        sys.stderr.write(
            "error: latency budgets are not supported: the cost model is a "
            "quadratic form in keep ratios, and latency is not; "
            "use --budget-kind flops or params\n")
        return 1
    result = plan(manifest=args.manifest, topology=args.topology,
                  budget_kind=args.budget_kind,
                  budget_ratio=args.budget_ratio, budget_abs=args.budget_abs,
                  beta=args.beta, samples=args.samples, kernel=args.kernel,
                  pooling=args.pooling, alpha_min=args.alpha_min,
                  divisor=args.divisor)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(plan_to_json(result))
    sys.stdout.write(report(result, args.format))
    sys.stderr.write(f"plan written to {args.out}\n")
    return 0


def _cmd_hsic(args: argparse.Namespace) -> int:
    dump = read_dump(args.manifest)
    matrix = build_independence_matrix(dump, kernel=KernelSpec.parse(args.kernel),
                                       pooling=args.pooling, samples=args.samples)
    text = independence_csv(matrix) if args.format == "csv" \
        else independence_json(matrix) + "\n"
    _write_or_print(text, args.out)
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    result, passed = verify(args.manifest, samples=args.samples,
                            pooling=args.pooling)
    for check in result["checks"]:
        flag = "pass" if check["passed"] else "FAIL"
        sys.stdout.write(f"[{flag}] {check['name']}: {check['detail']}\n")
    if result["degenerate"]:
        sys.stdout.write(
            "degenerate layers (constant activations): "
            + ", ".join(result["degenerate"]) + "\n")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if passed else 1


def _cmd_report(args: argparse.Namespace) -> int:
    with open(args.plan_file, "r", encoding="utf-8") as fh:
        loaded = plan_from_json(fh.read())
    _write_or_print(report(loaded, args.format), args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"plan": _cmd_plan, "hsic": _cmd_hsic,
                "verify": _cmd_verify, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except PlannerError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
