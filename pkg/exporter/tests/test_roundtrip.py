"""Round-trip conformance: exporter output drives the planner CLI.

The planner is exercised strictly through its command line and file
formats — the boundary the two packages actually share.
"""

import json
import shutil
import subprocess

import pytest

from activation_exporter import ExportConfig, export_activations, export_topology

pytestmark = pytest.mark.skipif(shutil.which("pruneplan") is None,
                                reason="pruneplan CLI not installed")


def test_export_then_verify_and_plan(tmp_path):
    cfg = ExportConfig(model="residual", out_dir=tmp_path, n=16, seed=42)
    manifest = export_activations(cfg)
    topology = export_topology(cfg)

    dump_names = {e["name"] for e in json.loads(manifest.read_text())["layers"]}
    topo_names = {e["name"] for e in json.loads(topology.read_text())["layers"]}
    aligned = dump_names == topo_names

    verify = subprocess.run(["pruneplan", "verify", "--manifest", str(manifest)],
                            capture_output=True, text=True)
    plan = subprocess.run(
        ["pruneplan", "plan", "--manifest", str(manifest),
         "--topology", str(topology), "--budget-kind", "flops",
         "--budget-ratio", "0.5", "--out", str(tmp_path / "plan.json")],
        capture_output=True, text=True)

    ok = aligned and verify.returncode == 0 and plan.returncode == 0
    print(f"[{'PASS' if ok else 'FAIL'}] exporter round trip (n=16): "
          f"names aligned={aligned}, verify rc={verify.returncode}, "
          f"plan rc={plan.returncode}")
    assert aligned, (dump_names, topo_names)
    assert verify.returncode == 0, verify.stdout + verify.stderr
    assert plan.returncode == 0, plan.stdout + plan.stderr

    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["achieved_cost"] <= doc["budget"]
    assert set(doc["channels"]) == topo_names
