"""Shared fixtures: synthetic activation dumps and topology JSON builders."""

from __future__ import annotations

import json

import numpy as np
import pytest

from pruneplan import write_dump


def build_chain_dump(directory, widths, n=64, seed=0, independent=(),
                     constant=(), spatial=None):
    """Write a dump whose layers share a common latent signal.

    Layer indices listed in ``independent`` get pure noise instead (their
    activations carry no dependence on the rest); indices in ``constant``
    get an all-equal payload (degenerate). ``spatial`` switches a layer to
    a 4-D (n, c, h, w) payload with the given (h, w).
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 8))
    layers = {}
    for idx, width in enumerate(widths):
        name = f"conv{idx + 1}"
        if idx in constant:
            data = np.full((n, width), 3.25)
        elif idx in independent:
            data = rng.standard_normal((n, width))
        else:
            mix = rng.standard_normal((8, width))
            data = z @ mix + 0.3 * rng.standard_normal((n, width))
        if spatial and idx in spatial:
            h, w = spatial[idx]
            data = np.repeat(data[:, :, None], h * w, axis=2)
            data = data.reshape(data.shape[0], width, h, w)
            data = data + 0.01 * rng.standard_normal(data.shape)
        layers[name] = data.astype(np.float32)
    return write_dump(str(directory), layers)


def build_chain_topology(path, widths, in_channels=3, k=3, spatial=None,
                         non_prunable=()):
    """Write a plain conv-chain topology JSON; returns the path."""
    layers = []
    prev_group, prev_c = -1, in_channels
    for idx, width in enumerate(widths):
        h, w = spatial[idx] if spatial else (8, 8)
        layers.append({"name": f"conv{idx + 1}", "kind": "conv", "in": prev_c,
                       "out": width, "k": k, "out_h": h, "out_w": w,
                       "group": idx + 1, "input_group": prev_group})
        prev_group, prev_c = idx + 1, width
    doc = {"layers": layers, "non_prunable_groups": list(non_prunable)}
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture
def chain_fixture(tmp_path):
    """A 3-layer correlated fixture: (manifest_path, topology_path)."""
    manifest = build_chain_dump(tmp_path / "dump", widths=(16, 32, 24), seed=42)
    topology = build_chain_topology(tmp_path / "topology.json",
                                    widths=(16, 32, 24))
    return manifest, topology


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
