"""Writer for the ITPA tensor-dump format the planner consumes.

Layout, little-endian throughout: magic ``ITPA``, format version (u32),
rank (u32), one u32 per dimension with ``dims[0]`` the sample count, a
dtype tag byte (0 = float32), then the row-major payload.  The manifest is
a JSON document ``{"n": ..., "layers": [{"name", "file", "shape"}, ...]}``.

Implemented here independently of the planner package so the two sides of
the format stay honest about the written bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ITPA"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def write_tensor(path: str | Path, data: np.ndarray) -> None:
    """Write one layer's activations; rank must be 2 or 4."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
    if arr.ndim not in (2, 4):
        raise ValueError(f"activation rank must be 2 or 4, got {arr.ndim}")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<B", DTYPE_FLOAT32)
    _atomic_write_bytes(Path(path), header + arr.tobytes(order="C"))


def write_manifest(path: str | Path, n: int,
                   layers: list[dict[str, object]]) -> None:
    doc = {"n": int(n), "layers": layers}
    payload = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _atomic_write_bytes(Path(path), payload.encode("utf-8"))


def write_json(path: str | Path, doc: dict[str, object]) -> None:
    payload = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _atomic_write_bytes(Path(path), payload.encode("utf-8"))
