"""Budgeted ratio solver: closed-form cases, invariants, group mapping."""

import numpy as np
import pytest

from pruneplan import (ConstraintForm, DimensionMismatch, ImportanceVector,
                       InfeasibleBudget, UnmappedLayer, importance_to_groups,
                       solve)
from pruneplan.net_model import parse_network
import json


def _form(t, group_order=None):
    t = np.asarray(t, dtype=np.float64)
    g = t.shape[0] - 1
    abar = np.ones(g + 1)
    return ConstraintForm(t_matrix=t, budget_kind="flops",
                          full_cost=float(abar @ t @ abar),
                          group_order=tuple(group_order or range(1, g + 1)))


def _chain_form(costs):
    """Conv-chain style form: cost f_l couples groups (l-1, l)."""
    g = len(costs)
    t = np.zeros((g + 1, g + 1))
    for l, f in enumerate(costs):
        t[l, l + 1] += f / 2
        t[l + 1, l] += f / 2
    return _form(t)


def test_symmetric_sphere_optimum():
    # identity quadratic, no index-0 coupling: optimum at (sqrt2/2, sqrt2/2)
    t = np.zeros((3, 3))
    t[1, 1] = t[2, 2] = 1.0
    res = solve(np.array([1.0, 1.0]), _form(t), 1.0, alpha_min=0.0)
    np.testing.assert_allclose(res.alpha, np.sqrt(2) / 2, atol=1e-7)
    np.testing.assert_allclose(res.objective, np.sqrt(2), rtol=1e-7)
    assert res.status == "optimal"


def test_slack_budget_returns_all_ones():
    form = _chain_form([4.0, 2.0])
    res = solve(np.array([1.0, 1.0]), form, form.full_cost * 2, alpha_min=0.05)
    np.testing.assert_array_equal(res.alpha, np.ones(2))
    assert res.status == "optimal"
    assert res.iterations == 0


def test_chain_budget_moves_mass_to_cheap_coordinate():
    # q = a1 + a1*a2 <= 0.75: optimum (0.375, 1) with objective 1.375,
    # strictly better than any bang-bang point
    form = _chain_form([1.0, 1.0])
    res = solve(np.array([1.0, 1.0]), form, 0.75, alpha_min=0.0)
    np.testing.assert_allclose(res.alpha, [0.375, 1.0], atol=1e-9)
    np.testing.assert_allclose(res.objective, 1.375, rtol=1e-9)
    assert res.status == "optimal"


def test_infeasible_budget_raises():
    form = _chain_form([1.0, 1.0])
    with pytest.raises(InfeasibleBudget):
        solve(np.array([1.0, 1.0]), form, 0.01, alpha_min=0.5)


def test_result_respects_bounds_and_budget(rng):
    for trial in range(30):
        g = int(rng.integers(2, 6))
        t = np.zeros((g + 1, g + 1))
        # random mix of chain couplings and diagonal mass
        for l in range(g):
            t[l, l + 1] = t[l + 1, l] = rng.uniform(0.1, 1.0)
            if rng.random() < 0.5:
                t[l + 1, l + 1] = rng.uniform(0.0, 1.0)
        form = _form(t)
        budget = rng.uniform(0.2, 0.9) * form.full_cost
        i = rng.uniform(0.05, 1.0, g)
        res = solve(i, form, budget, alpha_min=0.05)
        assert res.constraint_value <= budget * (1 + 1e-6)
        assert (res.alpha >= 0.05 - 1e-12).all()
        assert (res.alpha <= 1.0 + 1e-12).all()
        assert res.status == "optimal", f"trial {trial}: {res}"


def test_deterministic_bitwise(rng):
    form = _chain_form(list(rng.uniform(0.5, 2.0, 6)))
    i = rng.uniform(0.1, 1.0, 6)
    res1 = solve(i, form, 0.5 * form.full_cost)
    res2 = solve(i, form, 0.5 * form.full_cost)
    assert np.array_equal(res1.alpha, res2.alpha)
    assert res1.objective == res2.objective


def test_argmax_invariant_to_importance_scale(rng):
    form = _chain_form(list(rng.uniform(0.5, 2.0, 5)))
    i = rng.uniform(0.1, 1.0, 5)
    base = solve(i, form, 0.45 * form.full_cost)
    for c in (1e-3, 3.7, 1e4):
        scaled = solve(c * i, form, 0.45 * form.full_cost)
        np.testing.assert_allclose(scaled.alpha, base.alpha, atol=1e-8)
        np.testing.assert_allclose(scaled.objective, c * base.objective,
                                   rtol=1e-8)


def test_objective_monotone_in_budget(rng):
    form = _chain_form(list(rng.uniform(0.5, 2.0, 5)))
    i = rng.uniform(0.1, 1.0, 5)
    objs = [solve(i, form, r * form.full_cost).objective
            for r in (0.2, 0.35, 0.5, 0.65, 0.8, 0.95)]
    for lo, hi in zip(objs, objs[1:]):
        assert hi >= lo - 1e-9


def test_optimal_point_is_kkt_stationary(rng):
    form = _chain_form(list(rng.uniform(0.5, 2.0, 4)))
    i = rng.uniform(0.1, 1.0, 4)
    res = solve(i, form, 0.5 * form.full_cost)
    assert res.status == "optimal"
    assert res.kkt_residual <= 1e-6 * np.linalg.norm(i)
    assert res.lam >= 0.0


def test_solver_rejects_bad_inputs():
    form = _chain_form([1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        solve(np.ones(3), form, 1.0)
    with pytest.raises(ValueError):
        solve(np.array([1.0, 0.0]), form, 1.0)
    with pytest.raises(ValueError):
        solve(np.array([1.0, 1.0]), form, 1.0, alpha_min=1.5)


class TestImportanceToGroups:
    def _net(self, tmp_path, groups):
        layers = []
        prev_c, prev_g = 3, -1
        for pos, g in enumerate(groups):
            layers.append({"name": f"l{pos}", "kind": "conv", "in": prev_c,
                           "out": 8, "k": 3, "out_h": 4, "out_w": 4,
                           "group": g, "input_group": prev_g})
            prev_c, prev_g = 8, g
        path = tmp_path / "t.json"
        path.write_text(json.dumps({"layers": layers,
                                    "non_prunable_groups": []}))
        return parse_network(path)

    def test_singleton_groups_identity(self, tmp_path):
        net = self._net(tmp_path, [1, 2])
        imp = ImportanceVector(("l0", "l1"), np.array([0.3, 0.9]), beta=1.0)
        np.testing.assert_array_equal(importance_to_groups(imp, net),
                                      [0.3, 0.9])

    def test_shared_group_takes_mean(self, tmp_path):
        net = self._net(tmp_path, [1, 1])
        imp = ImportanceVector(("l0", "l1"), np.array([0.4, 0.6]), beta=1.0)
        np.testing.assert_allclose(importance_to_groups(imp, net), [0.5])

    def test_degenerate_members_are_skipped(self, tmp_path):
        net = self._net(tmp_path, [1, 1])
        imp = ImportanceVector(("l0", "l1"), np.array([0.4, 1.0]), beta=1.0)
        got = importance_to_groups(imp, net, degenerate=("l1",))
        np.testing.assert_allclose(got, [0.4])

    def test_all_degenerate_group_scores_zero(self, tmp_path):
        net = self._net(tmp_path, [1, 2])
        imp = ImportanceVector(("l0", "l1"), np.array([1.0, 0.7]), beta=1.0)
        got = importance_to_groups(imp, net, degenerate=("l0",))
        np.testing.assert_allclose(got, [0.0, 0.7])

    def test_missing_layer_raises(self, tmp_path):
        net = self._net(tmp_path, [1, 2])
        imp = ImportanceVector(("l0",), np.array([1.0]), beta=1.0)
        with pytest.raises(UnmappedLayer):
            importance_to_groups(imp, net)
