"""On-disk activation dump format and sample-matrix loading.

A dump is a JSON manifest plus one binary file per layer:

    manifest: {"n": int, "layers": [{"name": str, "file": str,
               "shape": [int, ...]}, ...]}

Layer file layout (all integers little-endian):

    magic    4 bytes  b"ITPA"
    version  u32      1
    rank     u32      number of dims, first dim is the sample count n
    dims     rank*u32
    dtype    u8       0 = float32 little-endian
    payload  row-major float32 values

Per-layer shapes are either (channels, height, width) for feature maps
or (features,) for flat vectors; the files store them with the leading
sample dimension, i.e. rank 4 or rank 2.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DtypeUnsupported,
    LayerNotFound,
    MagicMismatch,
    MissingFile,
    NonFiniteData,
    SampleCountMismatch,
    SchemaViolation,
)

MAGIC = b"ITPA"
FORMAT_VERSION = 1
DTYPE_F32 = 0

POOLINGS = ("flatten", "spatial_mean")

_HEADER_FIXED = struct.Struct("<4sII")  # magic, version, rank


@dataclass(frozen=True)
class LayerEntry:
    """One layer as recorded by the manifest."""

    name: str
    path: Path
    n: int
    shape: tuple[int, ...]  # per-sample shape, without the n axis


@dataclass(frozen=True)
class ActivationDump:
    """Validated view of a dump directory; holds metadata only."""

    manifest_path: Path
    n: int
    layers: tuple[LayerEntry, ...]

    def layer_names(self) -> tuple[str, ...]:
        return tuple(entry.name for entry in self.layers)

    def entry(self, layer_name: str) -> LayerEntry:
        for entry in self.layers:
            if entry.name == layer_name:
                return entry
        raise LayerNotFound(f"layer {layer_name!r} not in dump")


@dataclass
class ActivationMatrix:
    """n x d sample-by-feature matrix for one layer."""

    data: np.ndarray
    layer_name: str
    centered: bool

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def write_layer(path: Path | str, array: np.ndarray) -> None:
    """Write one activation tensor (first axis = samples) as a layer file."""
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim < 2:
        raise SchemaViolation("layer tensor must have a sample axis plus data axes")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER_FIXED.pack(MAGIC, FORMAT_VERSION, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(struct.pack("<B", DTYPE_F32))
        fh.write(array.tobytes(order="C"))


def read_layer(path: Path | str) -> np.ndarray:
    """Read one layer file back as a float32 array in its original shape."""
    dims, payload_offset = _read_header(Path(path))
    data = np.fromfile(path, dtype="<f4", offset=payload_offset)
    if data.size != int(np.prod(dims)):
        raise SchemaViolation(f"{path}: payload size does not match header dims {dims}")
    return data.reshape(dims)


def _read_header(path: Path) -> tuple[tuple[int, ...], int]:
    if not path.is_file():
        raise MissingFile(f"layer file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER_FIXED.size)
        if len(head) < _HEADER_FIXED.size:
            raise MagicMismatch(f"{path}: truncated header")
        magic, version, rank = _HEADER_FIXED.unpack(head)
        if magic != MAGIC:
            raise MagicMismatch(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise MagicMismatch(f"{path}: unsupported format version {version}")
        if rank < 2 or rank > 8:
            raise SchemaViolation(f"{path}: implausible rank {rank}")
        raw = fh.read(4 * rank)
        if len(raw) < 4 * rank:
            raise MagicMismatch(f"{path}: truncated dim list")
        dims = struct.unpack(f"<{rank}I", raw)
        tag = fh.read(1)
        if len(tag) < 1:
            raise MagicMismatch(f"{path}: missing dtype tag")
        if tag[0] != DTYPE_F32:
            raise DtypeUnsupported(f"{path}: dtype tag {tag[0]} not supported")
        payload_offset = fh.tell()
    expected = payload_offset + 4 * int(np.prod(dims))
    if path.stat().st_size != expected:
        raise SchemaViolation(f"{path}: file size {path.stat().st_size}, expected {expected}")
    return dims, payload_offset


def write_manifest(path: Path | str, n: int, layers: list[tuple[str, str, tuple[int, ...]]]) -> None:
    """Write a manifest; ``layers`` is (name, relative file, per-sample shape)."""
    doc = {
        "n": int(n),
        "layers": [
            {"name": name, "file": rel, "shape": [int(s) for s in shape]}
            for name, rel, shape in layers
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_dump(directory: Path | str, layers: dict[str, np.ndarray],
               manifest_name: str = "manifest.json") -> Path:
    """Write arrays (first axis = samples) as a full dump; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    n = None
    for name, array in layers.items():
        if n is None:
            n = array.shape[0]
        rel = f"{name}.itpa"
        write_layer(directory / rel, array)
        entries.append((name, rel, tuple(array.shape[1:])))
    manifest_path = directory / manifest_name
    write_manifest(manifest_path, n if n is not None else 0, entries)
    return manifest_path


def read_dump(manifest_path: Path | str) -> ActivationDump:
    """Parse and validate a manifest plus all referenced layer headers."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{manifest_path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "n" not in doc or "layers" not in doc:
        raise SchemaViolation(f"{manifest_path}: manifest must carry 'n' and 'layers'")
    n = doc["n"]
    if not isinstance(n, int) or n < 2:
        raise SchemaViolation(f"{manifest_path}: sample count n must be an int >= 2, got {n!r}")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise SchemaViolation(f"{manifest_path}: 'layers' must be a non-empty list")

    base = manifest_path.parent
    entries: list[LayerEntry] = []
    seen: set[str] = set()
    for item in doc["layers"]:
        if not isinstance(item, dict) or not {"name", "file", "shape"} <= item.keys():
            raise SchemaViolation(f"{manifest_path}: each layer needs name/file/shape")
        name = item["name"]
        if not isinstance(name, str) or not name:
            raise SchemaViolation(f"{manifest_path}: layer name must be a non-empty string")
        if name in seen:
            raise SchemaViolation(f"{manifest_path}: duplicate layer name {name!r}")
        seen.add(name)
        shape = tuple(item["shape"])
        if not shape or not all(isinstance(s, int) and s > 0 for s in shape):
            raise SchemaViolation(f"{manifest_path}: bad shape {shape!r} for layer {name!r}")
        if len(shape) not in (1, 3):
            raise SchemaViolation(
                f"{manifest_path}: layer {name!r} shape must be (features,) or (c, h, w)")
        path = base / item["file"]
        dims, _ = _read_header(path)
        if dims[1:] != shape:
            raise SchemaViolation(
                f"{path}: stored shape {dims[1:]} disagrees with manifest {shape}")
        if dims[0] != n:
            raise SampleCountMismatch(
                f"{path}: layer has n={dims[0]} samples, manifest says n={n}")
        entries.append(LayerEntry(name=name, path=path, n=n, shape=shape))
    return ActivationDump(manifest_path=manifest_path, n=n, layers=tuple(entries))


def center_columns(data: np.ndarray) -> np.ndarray:
    """Subtract each column's mean; arithmetic done in float64 for stability."""
    mean = data.mean(axis=0, dtype=np.float64)
    centered = data.astype(np.float64, copy=False) - mean
    return centered.astype(data.dtype, copy=False)


def load_layer(dump: ActivationDump, layer_name: str, pooling: str = "flatten",
               center: bool = True, samples: int | None = None) -> ActivationMatrix:
    """Load one layer as an n x d matrix.

    4-D feature maps (n, c, h, w) become n x (c*h*w) under ``flatten`` or
    n x c under ``spatial_mean``; flat layers pass through. Columns are
    mean-centered unless ``center`` is false. ``samples`` keeps only the
    first k samples (before centering).
    """
    if pooling not in POOLINGS:
        raise SchemaViolation(f"unknown pooling {pooling!r}, expected one of {POOLINGS}")
    entry = dump.entry(layer_name)
    raw = read_layer(entry.path)
    if samples is not None:
        if samples < 2 or samples > raw.shape[0]:
            raise SampleCountMismatch(
                f"requested {samples} samples, dump has {raw.shape[0]} (need >= 2)")
        raw = raw[:samples]
    if raw.ndim == 4:
        data = raw.mean(axis=(2, 3)) if pooling == "spatial_mean" \
            else raw.reshape(raw.shape[0], -1)
    elif raw.ndim == 2:
        data = raw
    else:
        raise SchemaViolation(f"layer {layer_name!r}: unsupported tensor rank {raw.ndim}")
    if not np.isfinite(data).all():
        raise NonFiniteData(f"layer {layer_name!r} contains NaN or infinite values")
    if center:
        data = center_columns(data)
    return ActivationMatrix(data=data, layer_name=layer_name, centered=center)
