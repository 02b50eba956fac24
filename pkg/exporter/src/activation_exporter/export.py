"""Run a model over sample images and write the planner's input artifacts."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import fx

from .errors import InsufficientSamples, ModelLoadError
from .itpa import write_json, write_manifest, write_tensor
from .models import load_model
from .tracing import TracedNetwork, topology_document, trace_network

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
# Builtin models are trained on nothing, so their "published preprocessing"
# is this fixed affine map from [0, 1] pixels.
_NORM_MEAN, _NORM_STD = 0.5, 0.25


@dataclass(frozen=True)
class ExportConfig:
    """Everything an export run needs; a given config is fully deterministic."""

    model: str
    out_dir: str | Path
    n: int = 64
    resolution: int = 32
    data: str = "synthetic"  # "synthetic" or a directory of images
    seed: int = 0
    layers: tuple[str, ...] | None = None
    capture: str = "post_activation"  # or "module_output"
    batch_size: int = 8

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"need at least 2 samples, got {self.n}")
        if self.resolution < 4:
            raise ValueError(f"resolution too small: {self.resolution}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive: {self.batch_size}")
        if self.capture not in ("post_activation", "module_output"):
            raise ValueError(f"unknown capture mode {self.capture!r}")


def _load_images(config: ExportConfig) -> np.ndarray:
    """n images as float32 NCHW, normalized; deterministic given the seed."""
    rng = np.random.default_rng(config.seed)
    if config.data == "synthetic":
        pixels = rng.random((config.n, 3, config.resolution, config.resolution),
                            dtype=np.float32)
    else:
        root = Path(config.data)
        files = sorted(p for p in root.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if len(files) < config.n:
            raise InsufficientSamples(
                f"need {config.n} images, found {len(files)} under {root}")
        from PIL import Image

        picked = [files[j] for j in rng.permutation(len(files))[:config.n]]
        frames = []
        for path in picked:
            with Image.open(path) as img:
                img = img.convert("RGB").resize(
                    (config.resolution, config.resolution), Image.BILINEAR)
                frames.append(np.asarray(img, dtype=np.float32) / 255.0)
        pixels = np.stack(frames).transpose(0, 3, 1, 2)
    return (pixels - _NORM_MEAN) / _NORM_STD


class _CaptureInterpreter(fx.Interpreter):
    """Forward pass that records the outputs of designated graph nodes."""

    def __init__(self, gm: fx.GraphModule, wanted: dict[str, str]) -> None:
        super().__init__(gm)
        self._wanted = wanted
        self.grabbed: dict[str, np.ndarray] = {}

    def run_node(self, node: fx.Node):
        out = super().run_node(node)
        layer = self._wanted.get(node.name)
        if layer is not None:
            self.grabbed[layer] = out.detach().to(torch.float32).numpy()
        return out


def _prepare(config: ExportConfig) -> tuple[TracedNetwork, torch.nn.Module]:
    model = load_model(config.model, config.seed)
    traced = trace_network(model, config.resolution, config.capture)
    return traced, model


def _selected(traced: TracedNetwork,
              config: ExportConfig) -> tuple[tuple[str, ...], dict[str, str]]:
    names = traced.layer_names()
    if config.layers is None:
        keep = names
    else:
        missing = sorted(set(config.layers) - set(names))
        if missing:
            raise ModelLoadError(
                f"layers not found in model {config.model!r}: "
                f"{', '.join(missing)}; available: {', '.join(names)}")
        keep = tuple(n for n in names if n in set(config.layers))
    wanted = {rec.capture_node: rec.name for rec in traced.layers
              if rec.name in set(keep)}
    return keep, wanted


def export_activations(config: ExportConfig) -> Path:
    """Dump per-layer activations for n images; returns the manifest path.

    One ITPA file per captured layer, all with the same sample count, plus
    a manifest. Captures every discovered layer unless ``config.layers``
    narrows the list (note the planner's ``plan`` needs the full set; a
    subset still serves independence-measurement workflows).
    """
    traced, _ = _prepare(config)
    keep, wanted = _selected(traced, config)
    images = _load_images(config)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chunks: dict[str, list[np.ndarray]] = {name: [] for name in keep}
    with torch.no_grad():
        for lo in range(0, config.n, config.batch_size):
            batch = torch.from_numpy(images[lo:lo + config.batch_size])
            interp = _CaptureInterpreter(traced.graph_module, wanted)
            interp.run(batch)
            for name in keep:
                chunks[name].append(interp.grabbed[name])

    entries = []
    for name in keep:
        data = np.concatenate(chunks[name], axis=0)
        filename = f"{name}.itpa"
        write_tensor(out_dir / filename, data)
        entries.append({"name": name, "file": filename,
                        "shape": [int(d) for d in data.shape[1:]]})
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, config.n, entries)
    return manifest


def export_topology(config: ExportConfig) -> Path:
    """Write the traced network structure as planner topology JSON."""
    traced, _ = _prepare(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "topology.json"
    write_json(path, topology_document(traced))
    return path
