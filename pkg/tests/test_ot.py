import json
import logging

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import edges_graph
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import edge_ranking_oracle, fgw_oracle, gw_oracle

from netalign import ot
from netalign.errors import ConvergenceError, NonFiniteError, ShapeError


def _sym_cost(rng, n, density=0.6):
    upper = np.triu((rng.random((n, n)) < density) * rng.random((n, n)), k=1)
    return sp.csr_array(upper + upper.T)


def _plan(values):
    n1, n2 = values.shape
    mu1, mu2 = ot.uniform_marginals(n1, n2)
    return ot.TransportPlan(values, mu1, mu2)


# ---------- Sinkhorn ----------


def test_constant_cost_gives_product_plan():
    mu1 = np.array([0.2, 0.3, 0.5])
    mu2 = np.array([0.6, 0.4])
    plan = ot.sinkhorn(np.full((3, 2), 2.5), mu1, mu2, reg=0.1)
    np.testing.assert_allclose(plan.values, np.outer(mu1, mu2), atol=1e-12)


def test_two_by_two_matches_scalar_search():
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    mu = np.array([0.5, 0.5])
    reg = 0.05
    plan = ot.sinkhorn(cost, mu, mu, reg=reg, tol=1e-12)
    # plans in Pi are [[t, .5-t], [.5-t, t]]
    t = np.linspace(1e-9, 0.5 - 1e-9, 200001)
    off = 0.5 - t
    obj = 2 * off + reg * 2 * (t * np.log(t) + off * np.log(off))
    best = t[np.argmin(obj)]
    assert plan.values[0, 0] > plan.values[0, 1]
    assert abs(plan.values[0, 0] - best) < 1e-5


def test_marginals_respected(rng):
    cost = rng.random((5, 7))
    mu1, mu2 = ot.uniform_marginals(5, 7)
    plan = ot.sinkhorn(cost, mu1, mu2, reg=0.5, tol=1e-9)
    np.testing.assert_allclose(plan.values.sum(axis=1), mu1, atol=1e-9)
    np.testing.assert_allclose(plan.values.sum(axis=0), mu2, atol=1e-9)
    assert (plan.values > 0).all()
    assert abs(plan.values.sum() - 1.0) < 1e-12


def test_tiny_reg_stays_finite(rng):
    cost = rng.random((6, 6)) * 10
    mu1, mu2 = ot.uniform_marginals(6, 6)
    plan = ot.sinkhorn(cost, mu1, mu2, reg=5e-4, max_iter=20, strict=False)
    assert np.isfinite(plan.values).all()
    assert np.isfinite(plan.log()).all()


def test_non_convergence_is_an_error_when_strict(rng):
    cost = rng.random((6, 6)) * 10
    mu1, mu2 = ot.uniform_marginals(6, 6)
    with pytest.raises(ConvergenceError):
        ot.sinkhorn(cost, mu1, mu2, reg=1e-3, max_iter=1, tol=1e-15)


def test_sinkhorn_input_checks():
    mu = np.array([0.5, 0.5])
    with pytest.raises(ValueError):
        ot.sinkhorn(np.zeros((2, 2)), mu, mu, reg=0.0)
    with pytest.raises(ValueError):
        ot.sinkhorn(np.zeros((2, 2)), np.array([0.5, 0.6]), mu, reg=1.0)
    with pytest.raises(ShapeError):
        ot.sinkhorn(np.zeros((3, 2)), mu, mu, reg=1.0)
    with pytest.raises(NonFiniteError):
        ot.sinkhorn(np.array([[0.0, np.inf], [0.0, 0.0]]), mu, mu, reg=1.0)


# ---------- Objective ----------


def test_linearization_vanishes_on_zero_costs(rng):
    z = sp.csr_array((3, 3))
    L = ot.gw_linearization(z, sp.csr_array((4, 4)), rng.random((3, 4)))
    assert not L.any()


def test_linearization_vanishes_on_zero_plan(rng):
    L = ot.gw_linearization(_sym_cost(rng, 3), _sym_cost(rng, 4), np.zeros((3, 4)))
    assert not L.any()


@pytest.mark.parametrize("n1,n2", [(3, 3), (3, 4), (4, 4)])
def test_gw_term_matches_quadruple_loop(rng, n1, n2):
    C1, C2 = _sym_cost(rng, n1), _sym_cost(rng, n2)
    S_n = rng.normal(size=(n1, n2))
    expected = gw_oracle(C1, C2, S_n)
    assert ot.gw_term(C1, C2, S_n) == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_fgw_unit_cost_uniform_plan():
    M = np.ones((3, 3))
    z = sp.csr_array((3, 3))
    value = ot.fgw_objective(ot.CostSet(M, z, z), ot.uniform_plan(3, 3), ot.SamplingShift(0.0), 0.0)
    assert value == pytest.approx(1.0)


def test_fgw_matches_oracle(rng):
    M = rng.random((3, 3))
    C1, C2 = _sym_cost(rng, 3), _sym_cost(rng, 3)
    S = rng.random((3, 3))
    S /= S.sum()
    got = ot.fgw_objective(ot.CostSet(M, C1, C2), _plan(S), ot.SamplingShift(0.05), 0.4)
    assert got == pytest.approx(fgw_oracle(M, C1, C2, S, 0.05, 0.4), rel=1e-10)


def test_identity_matching_has_zero_gw(ten_node_graph):
    C = ten_node_graph.adjacency * 0.5
    S = np.eye(10) / 10
    costs = ot.CostSet(np.ones((10, 10)), C, C)
    assert ot.fgw_objective(costs, _plan(S), ot.SamplingShift(0.0), 1.0) == pytest.approx(0.0)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(-0.5, 0.5))
def test_ranking_terms_decompose_objective(seed, lam):
    r = np.random.default_rng(seed)
    M = r.random((3, 4))
    C1, C2 = _sym_cost(r, 3), _sym_cost(r, 4)
    S_n = r.random((3, 4)) / 12 - lam
    pos, neg = ot.node_ranking_terms(M, S_n)
    assert pos >= 0 and neg >= 0
    assert pos - neg == pytest.approx(ot.wasserstein_term(M, S_n), abs=1e-12)
    epos, eneg = ot.edge_ranking_terms(C1, C2, S_n)
    assert epos - eneg == pytest.approx(ot.gw_term(C1, C2, S_n), abs=1e-10)


def test_edge_ranking_terms_match_oracle(rng):
    C1, C2 = _sym_cost(rng, 3), _sym_cost(rng, 3)
    S_n = rng.normal(size=(3, 3))
    pos, neg = ot.edge_ranking_terms(C1, C2, S_n)
    opos, oneg = edge_ranking_oracle(C1, C2, S_n)
    assert pos == pytest.approx(opos, rel=1e-10)
    assert neg == pytest.approx(oneg, rel=1e-10)


def test_sampling_shift_must_be_finite():
    with pytest.raises(NonFiniteError):
        ot.SamplingShift(float("nan"))


# ---------- Proximal point ----------


def _three_node_costs():
    g = edges_graph(3, [(0, 1), (1, 2)])
    C = g.adjacency * np.exp(-1.0)
    M = np.ones((3, 3)) - 0.9 * np.eye(3)
    return ot.CostSet(M, C, C)


def test_zero_iterations_return_warm_start():
    warm = ot.uniform_plan(3, 3)
    out = ot.proximal_fgw(_three_node_costs(), ot.SamplingShift(1 / 9), 0.5, 0.01, warm, T=0)
    assert out is warm


def test_identity_recovered_on_identical_graphs():
    plan = ot.proximal_fgw(
        _three_node_costs(), ot.SamplingShift(1 / 9), 0.5, 0.05, ot.uniform_plan(3, 3), strict=False
    )
    assert plan.values.argmax(axis=1).tolist() == [0, 1, 2]
    np.testing.assert_allclose(plan.values.sum(axis=1), plan.mu1, atol=1e-5)
    np.testing.assert_allclose(plan.values.sum(axis=0), plan.mu2, atol=1e-12)


def test_trace_starts_at_warm_start_objective():
    costs = _three_node_costs()
    shift = ot.SamplingShift(1 / 9)
    trace = []
    warm = ot.uniform_plan(3, 3)
    ot.proximal_fgw(costs, shift, 0.0, 1.0, warm, T=4, tol=1e-10, trace=trace, strict=False)
    assert len(trace) == 5
    assert trace[0] == pytest.approx(ot.fgw_objective(costs, warm, shift, 0.0))
    # alpha = 0: every step is an exact mirror-descent step on a linear objective
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:], strict=False))


def _random_costs(seed, n1=5, n2=6):
    r = np.random.default_rng(seed)
    return ot.CostSet(r.random((n1, n2)), _sym_cost(r, n1), _sym_cost(r, n2))


@pytest.mark.parametrize("alpha", [0.3, 0.75])
@pytest.mark.parametrize("seed", range(20))
def test_trace_never_rises_with_structure(seed, alpha, caplog):
    costs = _random_costs(seed)
    trace = []
    with caplog.at_level(logging.DEBUG, logger="netalign"):
        ot.proximal_fgw(
            costs, ot.SamplingShift(1 / 30), alpha, 1e-2, ot.uniform_plan(5, 6), N=500, trace=trace
        )
    assert len(trace) == 11
    assert (np.diff(trace) <= ot.DESCENT_SLACK).all()
    events = [json.loads(r.getMessage()) for r in caplog.records]
    steps = [e for e in events if e["msg"] == "proximal_iter"]
    assert len(steps) <= 10
    for step in steps:
        doublings = np.log2(step["weight"] / 1e-2)
        assert doublings == pytest.approx(round(doublings))
        assert 0 <= round(doublings) <= ot.MAX_WEIGHT_DOUBLINGS


def test_sinkhorn_sweeps_must_be_positive():
    costs = _random_costs(0)
    with pytest.raises(ValueError):
        ot.proximal_fgw(costs, ot.SamplingShift(0.0), 0.5, 0.1, ot.uniform_plan(5, 6), N=0)
    mu = np.array([0.5, 0.5])
    with pytest.raises(ValueError):
        ot.sinkhorn(np.zeros((2, 2)), mu, mu, reg=1.0, max_iter=0)


def test_warm_start_shape_checked():
    with pytest.raises(ShapeError):
        ot.proximal_fgw(_three_node_costs(), ot.SamplingShift(0.0), 0.5, 0.1, ot.uniform_plan(3, 4))


def test_trace_written_as_csv(tmp_path):
    p = tmp_path / "trace.csv"
    ot.write_trace([1.0, 0.5], p)
    assert p.read_text().splitlines() == ["iteration,objective", "0,1.0", "1,0.5"]
