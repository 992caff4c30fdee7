from __future__ import annotations

from fractions import Fraction

import pytest

from helpers import make_instances, sim_engine, sim_splits, wire
from pamas.backends import SimulatedAgentSpec
from pamas.costs import CostModelParams, cost_model_expected, exact, flat_majority, flat_majority_baseline, reconcile_meter, run_cost_check
from pamas.routing import route_inference
from pamas.training import forward_pass, train


def test_hand_value_ta_tc():
    params = CostModelParams(T=100, N=10, p_err=0.2, n_A=4, n_C=2)
    train_tokens, infer_tokens = cost_model_expected(params, "TA+TC")
    assert train_tokens == 6200 and isinstance(train_tokens, Fraction)
    assert infer_tokens == 500


def test_full_error_rate_equals_ta():
    params = CostModelParams(T=100, N=10, p_err=1, n_A=4, n_C=2)
    assert cost_model_expected(params, "TA+TC") == cost_model_expected(params, "TA")


def test_fully_connected_and_chain_rows():
    assert cost_model_expected(CostModelParams(T=10, N=1, n=4), "fully-connected")[0] == 320
    assert cost_model_expected(CostModelParams(T=10, N=3, n=4), "chain") == (240, 40)
    assert cost_model_expected(CostModelParams(T=10, N=1, layers=(3, 2)), "layered") == (100, 50)
    assert cost_model_expected(CostModelParams(T=100, m=3), "TA+TC+CR")[1] == 300


def test_rational_arithmetic_has_no_drift():
    assert exact(0.1) + exact(0.2) == exact(0.3)
    params = CostModelParams(T=7, N=3, p_err=Fraction(1, 3), n_A=5, n_C=1)
    assert cost_model_expected(params, "TA+TC")[0] == 3 * (6 + 2) * 7


def test_bad_parameters():
    with pytest.raises(ValueError):
        cost_model_expected(CostModelParams(), "ring")
    with pytest.raises(ValueError):
        CostModelParams(p_err=1.5)
    with pytest.raises(ValueError):
        CostModelParams(T=-1)


@pytest.mark.parametrize("decisions, expected", [([1, 1, 0], 1), ([1, 0], 0), ([0, 0, 0], 0)])
def test_flat_majority(decisions, expected):
    assert flat_majority(decisions) == expected


def test_flat_majority_baseline_queries_every_auditor():
    xs = make_instances(5)
    engine, _, meter = sim_engine(xs, n_auditors=5)
    decision = flat_majority_baseline(engine, xs[0])
    assert meter.totals().per_phase == {"baseline": 500}
    assert decision in (0, 1)


def perfect_engine(n_train=30):
    splits = sim_splits(n_train)
    specs = {f"A{i:02d}": SimulatedAgentSpec(1.0) for i in range(8)} | {"DM": SimulatedAgentSpec(1.0)}
    engine, _, meter = sim_engine(splits.all, specs=specs)
    train(engine, splits, 0)
    return engine, splits, meter


def test_perfect_agents_cost_exactly_forward():
    engine, splits, meter = perfect_engine()
    report = run_cost_check(engine, splits.train, tokens_per_call=100)
    h = engine.hierarchy
    n_a = len(h.active_auditors())
    n = len(splits.train)
    assert report.window["errors"] == 0
    assert report.row("training").measured == n * (n_a + 1) * 100
    assert report.row("full-inference").measured == n * (n_a + 1) * 100
    assert report.all_match


def test_reconcile_with_errors():
    splits = sim_splits(60)
    engine, _, _ = sim_engine(splits.all, accuracy=0.6)
    train(engine, splits, 0)
    report = run_cost_check(engine, splits.train, tokens_per_call=100)
    assert report.window["errors"] > 0
    assert report.all_match
    refine = report.row("refinement")
    assert refine.measured == report.window["errors"] * 2 * 100
    assert refine.idealized == report.window["errors"] * (report.window["n_A"] + report.window["n_C"]) * 100


def test_routed_inference_cost_is_m_times_t():
    xs = make_instances(20, seed=6)
    specs = {f"A{i:02d}": SimulatedAgentSpec(1.0) for i in range(8)} | {"DM": SimulatedAgentSpec(1.0)}
    engine, _, meter = sim_engine(xs, specs=specs)
    wire(engine, {f"C1_{g:02d}": {f"A{g * 2 + i:02d}": 1.0 for i in range(2)} for g in range(4)})
    for x in xs:
        mark = meter.mark()
        trace = route_inference(engine, x, record=False)
        assert meter.totals(mark).grand == trace.m * 100 == 500


def test_reconcile_flags_mismatch():
    splits = sim_splits(30)
    engine, _, meter = sim_engine(splits.all, accuracy=1.0)
    train(engine, splits, 0)
    mark = meter.mark()
    forward_pass(engine, splits.train[0])
    report = reconcile_meter(meter.totals(mark), T=100, N=2, n_A=len(engine.hierarchy.active_auditors()), n_C=2, errors=0)
    assert not report.row("forward").match and not report.all_match
