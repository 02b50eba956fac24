"""Exporter behaviour: formats, determinism, grouping, error gates."""

import json
import struct

import numpy as np
import pytest
import torch
from torch import nn

from activation_exporter import (
    ExportConfig,
    InsufficientSamples,
    ModelLoadError,
    UnsupportedOperator,
    export_activations,
    export_topology,
    load_model,
    trace_network,
)
from activation_exporter.itpa import write_tensor


def read_itpa(path):
    """Minimal reference reader for the dump format."""
    blob = path.read_bytes()
    assert blob[:4] == b"ITPA"
    version, rank = struct.unpack_from("<II", blob, 4)
    assert version == 1
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    (tag,) = struct.unpack_from("<B", blob, 12 + 4 * rank)
    assert tag == 0
    payload = np.frombuffer(blob, dtype="<f4", offset=13 + 4 * rank)
    return payload.reshape(dims)


# ---------------------------------------------------------------------------
# dump writing
# ---------------------------------------------------------------------------

def test_write_tensor_round_trip(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2)
    write_tensor(tmp_path / "x.itpa", data)
    np.testing.assert_array_equal(read_itpa(tmp_path / "x.itpa"), data)


def test_write_tensor_rejects_bad_rank(tmp_path):
    with pytest.raises(ValueError):
        write_tensor(tmp_path / "x.itpa", np.zeros(5, dtype=np.float32))


def test_export_writes_one_file_per_layer(tmp_path):
    cfg = ExportConfig(model="tinyconv", out_dir=tmp_path, n=16, seed=0)
    manifest = export_activations(cfg)
    doc = json.loads(manifest.read_text())
    assert doc["n"] == 16
    assert len(doc["layers"]) == 4  # three convs and the head
    for entry in doc["layers"]:
        payload = read_itpa(tmp_path / entry["file"])
        assert payload.shape[0] == 16
        assert list(payload.shape[1:]) == entry["shape"]
        assert np.isfinite(payload).all()


def test_export_same_seed_is_byte_identical(tmp_path):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cfg = ExportConfig(model="residual", out_dir=out, n=8, seed=11)
        manifest = export_activations(cfg)
        doc = json.loads(manifest.read_text())
        blob = manifest.read_bytes()
        for entry in doc["layers"]:
            blob += (out / entry["file"]).read_bytes()
        blobs.append(blob)
    assert blobs[0] == blobs[1]


def test_export_different_seed_changes_payload_not_structure(tmp_path):
    docs, payloads = [], []
    for seed in (1, 2):
        out = tmp_path / str(seed)
        cfg = ExportConfig(model="tinyconv", out_dir=out, n=8, seed=seed)
        manifest = export_activations(cfg)
        doc = json.loads(manifest.read_text())
        docs.append(doc)
        payloads.append(b"".join((out / e["file"]).read_bytes()
                                 for e in doc["layers"]))
    assert docs[0] == docs[1]  # names, shapes, n unchanged
    assert payloads[0] != payloads[1]


def test_export_layer_subset(tmp_path):
    cfg = ExportConfig(model="residual", out_dir=tmp_path, n=4,
                       layers=("stem", "down"))
    doc = json.loads(export_activations(cfg).read_text())
    assert [e["name"] for e in doc["layers"]] == ["stem", "down"]


def test_export_unknown_layer_subset(tmp_path):
    cfg = ExportConfig(model="residual", out_dir=tmp_path, n=4,
                       layers=("stem", "nope"))
    with pytest.raises(ModelLoadError, match="nope"):
        export_activations(cfg)


def test_capture_mode_changes_payload(tmp_path):
    grabbed = {}
    for mode in ("post_activation", "module_output"):
        cfg = ExportConfig(model="tinyconv", out_dir=tmp_path / mode, n=4,
                           seed=5, capture=mode)
        doc = json.loads(export_activations(cfg).read_text())
        entry = doc["layers"][0]
        grabbed[mode] = read_itpa(tmp_path / mode / entry["file"])
    post, raw = grabbed["post_activation"], grabbed["module_output"]
    assert (post >= 0).all()          # ReLU output
    assert (raw < 0).any()            # pre-activation has negative values
    np.testing.assert_allclose(post, np.maximum(raw, 0.0), rtol=1e-6)


def test_insufficient_samples(tmp_path):
    from PIL import Image

    data_dir = tmp_path / "imgs"
    data_dir.mkdir()
    for j in range(3):
        Image.new("RGB", (40, 40), (j, j, j)).save(data_dir / f"{j}.png")
    cfg = ExportConfig(model="tinyconv", out_dir=tmp_path / "out", n=16,
                       data=str(data_dir))
    with pytest.raises(InsufficientSamples):
        export_activations(cfg)


def test_directory_source_works(tmp_path):
    from PIL import Image

    data_dir = tmp_path / "imgs"
    data_dir.mkdir()
    rng = np.random.default_rng(0)
    for j in range(6):
        pixels = rng.integers(0, 255, (40, 40, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(data_dir / f"img{j}.png")
    cfg = ExportConfig(model="tinyconv", out_dir=tmp_path / "out", n=4,
                       data=str(data_dir))
    doc = json.loads(export_activations(cfg).read_text())
    assert doc["n"] == 4


def test_config_validation():
    with pytest.raises(ValueError):
        ExportConfig(model="tinyconv", out_dir="x", n=1)
    with pytest.raises(ValueError):
        ExportConfig(model="tinyconv", out_dir="x", capture="middle")


def test_unknown_model():
    with pytest.raises(ModelLoadError, match="unknown model"):
        load_model("resnet5000", seed=0)


# ---------------------------------------------------------------------------
# topology inference
# ---------------------------------------------------------------------------

def test_chain_topology_groups_are_sequential(tmp_path):
    cfg = ExportConfig(model="tinyconv", out_dir=tmp_path, n=4)
    doc = json.loads(export_topology(cfg).read_text())
    groups = [layer["group"] for layer in doc["layers"]]
    inputs = [layer["input_group"] for layer in doc["layers"]]
    assert groups == [1, 2, 3, 4]
    assert inputs == [-1, 1, 2, 3]
    assert doc["non_prunable_groups"] == [4]


def test_residual_addition_shares_group(tmp_path):
    cfg = ExportConfig(model="residual", out_dir=tmp_path, n=4)
    doc = json.loads(export_topology(cfg).read_text())
    by_name = {layer["name"]: layer for layer in doc["layers"]}
    assert by_name["stem"]["group"] == by_name["branch"]["group"]
    assert by_name["down"]["input_group"] == by_name["stem"]["group"]


def test_depthwise_stays_in_input_group(tmp_path):
    cfg = ExportConfig(model="depthwise", out_dir=tmp_path, n=4)
    doc = json.loads(export_topology(cfg).read_text())
    dw = next(layer for layer in doc["layers"]
              if layer["kind"] == "depthwise_conv")
    assert dw["group"] == dw["input_group"]
    assert dw["in"] == dw["out"]


def test_topology_shapes_come_from_tracing(tmp_path):
    cfg = ExportConfig(model="tinyconv", out_dir=tmp_path, n=4, resolution=48)
    doc = json.loads(export_topology(cfg).read_text())
    by_name = {layer["name"]: layer for layer in doc["layers"]}
    assert (by_name["0"]["out_h"], by_name["0"]["out_w"]) == (48, 48)
    assert (by_name["2"]["out_h"], by_name["2"]["out_w"]) == (24, 24)  # stride 2
    assert (by_name["8"]["out_h"], by_name["8"]["out_w"]) == (1, 1)


def test_unsupported_operator_names_the_layer():
    model = nn.Sequential(nn.Conv2d(3, 8, 3), nn.ConvTranspose2d(8, 8, 2))
    model.eval()
    with pytest.raises(UnsupportedOperator, match="ConvTranspose2d"):
        trace_network(model, 32)


def test_grouped_but_not_depthwise_conv_rejected():
    model = nn.Sequential(nn.Conv2d(3, 4, 3, padding=1),
                          nn.Conv2d(4, 8, 3, groups=2))
    model.eval()
    with pytest.raises(UnsupportedOperator, match="groups=2"):
        trace_network(model, 32)


def test_concatenation_rejected():
    class Cat(nn.Module):
        def __init__(self):
            super().__init__()
            self.a = nn.Conv2d(3, 4, 3, padding=1)
            self.b = nn.Conv2d(3, 4, 3, padding=1)

        def forward(self, x):
            return torch.cat([self.a(x), self.b(x)], dim=1)

    with pytest.raises(UnsupportedOperator, match="cat"):
        trace_network(Cat().eval(), 32)


def test_name_alignment_between_dump_and_topology(tmp_path):
    cfg = ExportConfig(model="depthwise", out_dir=tmp_path, n=4)
    manifest = export_activations(cfg)
    topology = export_topology(cfg)
    dump_names = {e["name"] for e in json.loads(manifest.read_text())["layers"]}
    topo_names = {e["name"] for e in json.loads(topology.read_text())["layers"]}
    assert dump_names == topo_names
