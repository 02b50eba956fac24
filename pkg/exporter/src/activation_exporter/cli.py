"""Command-line front end: export a dump and topology in one run."""

from __future__ import annotations

import argparse
import sys

from .errors import ExporterError
from .export import ExportConfig, export_activations, export_topology
from .models import available_models


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activation-export",
        description="Capture per-layer activations and topology for pruneplan")
    parser.add_argument("--model", help="builtin model name")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--n", type=int, default=64, help="sample count")
    parser.add_argument("--resolution", type=int, default=32,
                        help="input image edge length")
    parser.add_argument("--data", default="synthetic",
                        help="'synthetic' or a directory of images")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--layers",
                        help="comma-separated layer subset (default: all)")
    parser.add_argument("--capture", default="post_activation",
                        choices=("post_activation", "module_output"))
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--skip-topology", action="store_true",
                        help="write only the activation dump")
    parser.add_argument("--list-models", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_models:
        for name in available_models():
            print(name)
        return 0
    if not args.model or not args.out:
        print("error: --model and --out are required", file=sys.stderr)
        return 1
    layers = tuple(s.strip() for s in args.layers.split(",")) \
        if args.layers else None
    try:
        config = ExportConfig(
            model=args.model, out_dir=args.out, n=args.n,
            resolution=args.resolution, data=args.data, seed=args.seed,
            layers=layers, capture=args.capture, batch_size=args.batch_size)
        manifest = export_activations(config)
        print(f"manifest written to {manifest}")
        if not args.skip_topology:
            topology = export_topology(config)
            print(f"topology written to {topology}")
    except (ExporterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
