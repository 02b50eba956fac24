"""Pipeline plan/round/repair/verify/report behavior."""

import json

import numpy as np
import pytest

from pruneplan import (InfeasibleBudget, LayerNotFound, RepairFailed, plan,
                       plan_from_json, plan_to_json, report, round_and_repair,
                       verify)
from pruneplan.net_model import constraint_form, network_cost, parse_network
from conftest import build_chain_dump, build_chain_topology


def test_plan_respects_budget(chain_fixture):
    manifest, topology = chain_fixture
    p = plan(manifest, topology, budget_kind="flops", budget_ratio=0.5)
    assert p.achieved_cost <= p.budget
    assert 0.40 < p.achieved_cost / p.full_cost <= 0.50
    for row in p.meta["layers"]:
        assert 1 <= row["kept"] <= row["original"]


def test_plan_full_budget_keeps_original_architecture(chain_fixture):
    manifest, topology = chain_fixture
    p = plan(manifest, topology, budget_ratio=1.0)
    assert p.channels == {"conv1": 16, "conv2": 32, "conv3": 24}
    assert p.achieved_cost == p.full_cost


def test_plan_infeasible_budget_raises(chain_fixture):
    manifest, topology = chain_fixture
    with pytest.raises(InfeasibleBudget):
        plan(manifest, topology, budget_ratio=0.0001, alpha_min=0.2)


def test_plan_params_budget(chain_fixture):
    manifest, topology = chain_fixture
    p = plan(manifest, topology, budget_kind="params", budget_ratio=0.6)
    assert p.budget_kind == "params"
    assert p.achieved_cost <= p.budget


def test_plan_absolute_budget(chain_fixture):
    manifest, topology = chain_fixture
    ref = plan(manifest, topology, budget_ratio=0.5)
    p = plan(manifest, topology, budget_abs=ref.budget)
    assert p.channels == ref.channels


def test_plan_requires_exactly_one_budget_form(chain_fixture):
    manifest, topology = chain_fixture
    with pytest.raises(ValueError):
        plan(manifest, topology)
    with pytest.raises(ValueError):
        plan(manifest, topology, budget_ratio=0.5, budget_abs=100.0)


def test_plan_rejects_topology_layer_missing_from_dump(tmp_path):
    manifest = build_chain_dump(tmp_path / "d", widths=(16, 32), seed=1)
    topology = build_chain_topology(tmp_path / "t.json", widths=(16, 32, 24))
    with pytest.raises(LayerNotFound):
        plan(manifest, topology, budget_ratio=0.5)


def test_plan_is_deterministic(chain_fixture):
    manifest, topology = chain_fixture
    a = plan_to_json(plan(manifest, topology, budget_ratio=0.5))
    b = plan_to_json(plan(manifest, topology, budget_ratio=0.5))
    assert a == b


def test_plan_json_round_trip(chain_fixture):
    manifest, topology = chain_fixture
    p = plan(manifest, topology, budget_ratio=0.5)
    assert plan_from_json(plan_to_json(p)) == p


def test_plan_survives_degenerate_layer(tmp_path):
    manifest = build_chain_dump(tmp_path / "d", widths=(16, 32, 24), seed=1,
                                constant=(1,))
    topology = build_chain_topology(tmp_path / "t.json", widths=(16, 32, 24))
    p = plan(manifest, topology, budget_ratio=0.5)
    assert p.achieved_cost <= p.budget
    rows = {r["name"]: r for r in p.meta["layers"]}
    assert rows["conv2"]["degenerate"]


class TestRoundAndRepair:
    def _setup(self, tmp_path, widths=(16, 32, 24)):
        topology = build_chain_topology(tmp_path / "t.json", widths=widths)
        net = parse_network(topology)
        form = constraint_form(net, "flops")
        return net, form

    def test_exact_multiple(self, tmp_path):
        net, form = self._setup(tmp_path, widths=(64, 64, 64))
        kept = round_and_repair(np.array([0.5, 1.0, 1.0]), net, form,
                                form.full_cost, divisor=8,
                                group_importance=np.ones(3))
        assert kept[1] == 32

    def test_plain_rounding(self, tmp_path):
        net, form = self._setup(tmp_path, widths=(10, 10, 10))
        kept = round_and_repair(np.array([0.5, 0.26, 0.24]), net, form,
                                form.full_cost, divisor=1,
                                group_importance=np.ones(3))
        assert kept == {1: 5, 2: 3, 3: 2}

    def test_divisor_floor_and_cap(self, tmp_path):
        net, form = self._setup(tmp_path, widths=(10, 12, 10))
        kept = round_and_repair(np.array([0.01, 1.0, 1.0]), net, form,
                                form.full_cost, divisor=8,
                                group_importance=np.ones(3))
        assert kept[1] == 8      # floored to the divisor
        # half-up rounding of 12/8 would give 16; capped at the original 12
        assert kept[2] == 12

    def test_overshoot_decrements_least_important_group(self, tmp_path):
        net, form = self._setup(tmp_path, widths=(10, 10, 10))
        alpha = np.array([0.55, 0.55, 0.55])  # rounds up: 6,6,6
        kept_free = round_and_repair(alpha, net, form, form.full_cost,
                                     divisor=1, group_importance=np.ones(3))
        assert kept_free == {1: 6, 2: 6, 3: 6}
        budget = network_cost(net, "flops", {1: 6, 2: 6, 3: 6}) - 1
        kept = round_and_repair(alpha, net, form, budget, divisor=1,
                                group_importance=np.array([0.9, 0.1, 0.9]))
        # exactly one decrement, applied to a group whose score is lowest;
        # freed cost also matters, but group 2 is both cheap and unimportant
        assert sorted(kept.values()) == [5, 6, 6]
        assert kept[2] == 5

    def test_repair_failure_when_floor_exceeds_budget(self, tmp_path):
        net, form = self._setup(tmp_path, widths=(10, 10, 10))
        with pytest.raises(RepairFailed):
            round_and_repair(np.array([0.1, 0.1, 0.1]), net, form, budget=1.0,
                             divisor=1, group_importance=np.ones(3))

    def test_never_exceeds_budget(self, tmp_path, rng):
        net, form = self._setup(tmp_path)
        for _ in range(25):
            alpha = rng.uniform(0.05, 1.0, 3)
            budget = rng.uniform(0.3, 1.0) * form.full_cost
            try:
                kept = round_and_repair(alpha, net, form, budget, divisor=1,
                                        group_importance=rng.uniform(0.1, 1, 3))
            except RepairFailed:
                continue
            assert network_cost(net, "flops", kept) <= budget


class TestVerify:
    def test_well_formed_dump_passes(self, chain_fixture):
        manifest, _ = chain_fixture
        result, passed = verify(manifest)
        assert passed
        assert all(c["passed"] for c in result["checks"])
        names = {c["name"] for c in result["checks"]}
        assert {"finite-data", "scale-invariance", "orthogonal-invariance",
                "gaussian-mi-monotone", "nhsic-tracks-dependence"} <= names

    def test_constant_layer_reported_not_fatal(self, tmp_path):
        manifest = build_chain_dump(tmp_path / "d", widths=(16, 32, 24),
                                    seed=1, constant=(2,))
        result, passed = verify(manifest)
        assert passed
        assert result["degenerate"] == ["conv3"]

    def test_nan_payload_fails_finite_check(self, tmp_path, rng):
        from pruneplan import write_dump
        bad = rng.standard_normal((16, 4)).astype(np.float32)
        bad[0, 0] = np.nan
        good = rng.standard_normal((16, 4)).astype(np.float32)
        manifest = write_dump(tmp_path / "d", {"a": bad, "b": good})
        result, passed = verify(manifest)
        assert not passed
        finite = [c for c in result["checks"] if c["name"] == "finite-data"][0]
        assert not finite["passed"]


class TestReport:
    def test_text_report_has_table_and_bars(self, chain_fixture):
        manifest, topology = chain_fixture
        p = plan(manifest, topology, budget_ratio=0.5)
        text = report(p, "text")
        for name in ("conv1", "conv2", "conv3"):
            assert text.count(name) == 2  # table row + bar row
        assert "|#" in text
        assert "achieved cost" in text

    def test_csv_report_has_one_row_per_layer(self, chain_fixture):
        manifest, topology = chain_fixture
        p = plan(manifest, topology, budget_ratio=0.5)
        lines = report(p, "csv").strip().split("\n")
        assert len(lines) == 1 + 3
        assert lines[0].startswith("layer,kind,group,original,kept")

    def test_json_report_is_plan_json(self, chain_fixture):
        manifest, topology = chain_fixture
        p = plan(manifest, topology, budget_ratio=0.5)
        assert json.loads(report(p, "json")) == json.loads(plan_to_json(p))

    def test_unknown_format_rejected(self, chain_fixture):
        manifest, topology = chain_fixture
        p = plan(manifest, topology, budget_ratio=0.5)
        with pytest.raises(ValueError):
            report(p, "yaml")


def test_beta_zero_gives_uniform_importance(chain_fixture):
    manifest, topology = chain_fixture
    p = plan(manifest, topology, budget_ratio=0.5, beta=0.0)
    imps = [r["importance"] for r in p.meta["layers"]]
    np.testing.assert_array_equal(imps, np.ones(len(imps)))
