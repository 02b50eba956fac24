"""Layer-to-layer independence matrix and per-layer importance scores.

The independence matrix H holds nhsic(layer_i, layer_j) for every pair of
exported layers. A layer whose activations are highly dependent on the rest
of the network is redundant; its importance

    i_l = exp(-beta * sum_{j != l} H[l][j])

is small, steering the planner toward pruning it harder. ``beta`` trades
how aggressively the dependence sum is converted into a preference.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .activation_store import ActivationDump, load_layer
from .errors import DimensionMismatch, LayerNotFound
from .hsic_kernel import LINEAR, KernelSpec, gram, nhsic, nhsic_pair


@dataclass
class IndependenceMatrix:
    """Symmetric L x L matrix of normalized HSIC values between layers."""

    layer_names: tuple[str, ...]
    values: np.ndarray
    kernel: KernelSpec
    n: int
    pooling: str
    degenerate: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return len(self.layer_names)

    def index(self, name: str) -> int:
        try:
            return self.layer_names.index(name)
        except ValueError:
            raise LayerNotFound(f"layer {name!r} not in independence matrix") from None

    def value(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])


@dataclass
class ImportanceVector:
    """exp(-beta * row-sum) importance per layer, aligned with layer_names."""

    layer_names: tuple[str, ...]
    values: np.ndarray
    beta: float

    def value(self, name: str) -> float:
        try:
            idx = self.layer_names.index(name)
        except ValueError:
            raise LayerNotFound(f"layer {name!r} has no importance score") from None
        return float(self.values[idx])


def build_independence_matrix(dump: ActivationDump,
                              layer_names: Sequence[str] | None = None,
                              kernel: KernelSpec = LINEAR,
                              pooling: str = "flatten",
                              samples: int | None = None) -> IndependenceMatrix:
    """Compute pairwise nHSIC over the dump's layers.

    Off-diagonal entries use the route-selecting pair estimator; the
    diagonal is pinned to exactly 1.0 except for degenerate (constant)
    layers which score 0 everywhere. Layers are processed in manifest
    order unless an explicit subset/order is given.
    """
    names = tuple(layer_names) if layer_names is not None else dump.layer_names()
    if len(names) < 2:
        raise DimensionMismatch("independence matrix needs at least 2 layers")
    mats = [load_layer(dump, name, pooling=pooling, samples=samples) for name in names]
    n = mats[0].n

    size = len(names)
    values = np.zeros((size, size), dtype=np.float64)
    degenerate: list[str] = []

    if kernel.name == "linear":
        # For the linear kernel the fast feature route only needs each
        # layer's centered features once; fall back to Grams for wide layers.
        feats = [m.data.astype(np.float64, copy=False) for m in mats]
        grams = [gram(f, kernel) if f.shape[1] >= n else None for f in feats]
        deg_mask = []
        for f, g in zip(feats, grams):
            if g is not None:
                deg_mask.append(g.is_degenerate())
            else:
                deg_mask.append(np.linalg.norm(f.T @ f) <= 1e-12 * n)
        for i in range(size):
            if deg_mask[i]:
                degenerate.append(names[i])
                continue
            values[i, i] = 1.0
            for j in range(i + 1, size):
                if deg_mask[j]:
                    continue
                if grams[i] is not None and grams[j] is not None:
                    v = nhsic(grams[i], grams[j])
                else:
                    v = nhsic_pair(feats[i], feats[j], kernel)
                values[i, j] = values[j, i] = v
    else:
        grams = [gram(m.data.astype(np.float64, copy=False), kernel) for m in mats]
        for i in range(size):
            if grams[i].is_degenerate():
                degenerate.append(names[i])
                continue
            values[i, i] = 1.0
            for j in range(i + 1, size):
                if grams[j].is_degenerate():
                    continue
                v = nhsic(grams[i], grams[j])
                values[i, j] = values[j, i] = v

    return IndependenceMatrix(layer_names=names, values=values, kernel=kernel,
                              n=n, pooling=pooling, degenerate=tuple(degenerate))


def importance(matrix: IndependenceMatrix, beta: float = 1.0) -> ImportanceVector:
    """Importance i_l = exp(-beta * sum of off-diagonal row l)."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    off_sum = matrix.values.sum(axis=1) - np.diag(matrix.values)
    values = np.exp(-beta * off_sum)
    return ImportanceVector(layer_names=matrix.layer_names, values=values, beta=beta)


def importance_sweep(matrix: IndependenceMatrix,
                     betas: Sequence[float]) -> dict[float, ImportanceVector]:
    """Importance vectors for several beta values (ablation helper)."""
    return {float(b): importance(matrix, float(b)) for b in betas}


def independence_report(matrix: IndependenceMatrix) -> dict:
    """JSON-ready dict with the matrix, per-row sums and metadata."""
    off_sum = matrix.values.sum(axis=1) - np.diag(matrix.values)
    return {
        "layers": list(matrix.layer_names),
        "kernel": str(matrix.kernel),
        "samples": matrix.n,
        "pooling": matrix.pooling,
        "degenerate": list(matrix.degenerate),
        "values": [[float(v) for v in row] for row in matrix.values],
        "row_sums": [float(v) for v in off_sum],
    }


def independence_csv(matrix: IndependenceMatrix) -> str:
    """CSV text: header of layer names, then L rows of 9-significant-digit values."""
    buf = io.StringIO()
    buf.write(",".join(matrix.layer_names))
    buf.write("\n")
    for row in matrix.values:
        buf.write(",".join("%.9g" % v for v in row))
        buf.write("\n")
    return buf.getvalue()


def independence_json(matrix: IndependenceMatrix) -> str:
    return json.dumps(independence_report(matrix), indent=2, sort_keys=True)
