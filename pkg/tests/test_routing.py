from __future__ import annotations

from dataclasses import replace

import pytest

from helpers import make_instances, sim_engine, sim_splits, wire
from pamas.backends import SimulatedAgentSpec
from pamas.routing import ActivationTrace, route_group, route_inference
from pamas.training import forward_pass, train

PERFECT = SimulatedAgentSpec(1.0)
WRONG = SimulatedAgentSpec(0.0)


def routed_group(votes, weights, label=1, hyper=None):
    """One Coordinator over auditors whose votes on a label-``label`` instance are fixed."""
    n = len(votes)
    specs = {f"A{i:02d}": PERFECT if v == label else WRONG for i, v in enumerate(votes)}
    xs = [x for x in make_instances(10) if x.label == label]
    engine, _, meter = sim_engine(xs, n_auditors=n, specs=specs)
    if hyper:
        engine.hyper = replace(engine.hyper, **hyper)
    wire(engine, {"C1_00": {f"A{i:02d}": w for i, w in enumerate(weights)}})
    trace = ActivationTrace(xs[0].id, "t")
    state = route_group(engine, "C1_00", xs[0], trace)
    return state, trace, engine, meter


def test_top_two_agreement_short_circuits():
    state, trace, _, meter = routed_group([1, 1, 0, 0], [0.9, 0.8, 0.5, 0.4])
    assert state.decision == 1 and state.activation_count == 2
    assert state.active == ["A00", "A01"] and len(meter.log) == 2


def test_split_then_agreeing_pair():
    state, *_ = routed_group([1, 0, 1, 1], [0.9, 0.8, 0.5, 0.4])
    assert state.activation_count == 4 and state.margins == [0.0, 2.0] and state.decision == 1


def test_odd_final_step():
    state, *_ = routed_group([1, 0, 0], [0.9, 0.8, 0.5])
    assert state.activation_count == 3 and state.margins[-1] == -1.0 and state.decision == 0


def test_children_visited_in_confidence_order_ties_by_id():
    state, *_ = routed_group([1, 0, 1, 0], [0.5, 0.9, 0.5, 0.9])
    assert [c for c, _ in state.ordered] == ["A01", "A03", "A00", "A02"]
    assert state.activation_count == 2 and state.decision == 0


def test_exhausted_tie_uses_top_child_and_flags():
    state, _, engine, _ = routed_group([0, 0, 1, 1], [0.4, 0.9, 0.8, 0.5])
    assert state.tie and state.activation_count == 4
    assert state.decision == 0  # A01 holds the highest confidence
    assert any("exhausted tie" in w for w in engine.report.warnings)


def test_weighted_margin_flag():
    # unweighted: 2-2 tie after all four; weighted: first pair already decides
    state, _, _, _ = routed_group([1, 0, 1, 0], [0.9, 0.2, 0.1, 0.1], hyper={"weighted_routing": True})
    assert state.activation_count == 2 and state.decision == 1
    assert state.margins == [pytest.approx(0.7)]


def test_routed_records_carry_rule():
    _, trace, engine, _ = routed_group([1, 1, 0, 0], [0.9, 0.8, 0.5, 0.4])
    rec = engine.hierarchy.nodes["C1_00"].actions.records[-1]
    assert rec.rule == "routed" and [v[0] for v in rec.votes] == ["A00", "A01"]
    assert {a.id for a in engine.auditors if a.actions.records} == {"A00", "A01"}


def test_single_coordinator_hierarchy():
    xs = make_instances(10)
    engine, _, meter = sim_engine(xs, n_auditors=3)
    wire(engine, {"C1_00": {"A00": 1.0, "A01": 1.0, "A02": 1.0}})
    trace = route_inference(engine, xs[0])
    assert trace.states["DM"].active == ["C1_00"]
    assert [s.sub_id for s in trace.summaries] == ["C1_00"]
    kinds = [u.kind for u in meter.log]
    assert kinds.count("synthesize") == 1 and kinds.count("judge") == trace.auditor_calls


def test_unanimous_routing_matches_full_pass_and_is_cheaper():
    xs = make_instances(40, seed=2)
    specs = {f"A{i:02d}": PERFECT for i in range(8)} | {"DM": PERFECT}
    engine, _, meter = sim_engine(xs, specs=specs)
    wire(engine, {f"C1_{g:02d}": {f"A{g * 2 + i:02d}": 1.0 for i in range(2)} for g in range(4)})
    for x in xs:
        mark = meter.mark()
        routed = route_inference(engine, x, record=False)
        routed_calls = len(meter.since(mark))
        mark = meter.mark()
        full = forward_pass(engine, x, record=False)
        full_calls = len(meter.since(mark))
        assert routed.final.decision == full.final.decision == x.label
        assert routed_calls == routed.m == 2 * 2 + 1 < full_calls == 9


def test_dormant_agents_make_no_calls():
    splits = sim_splits(80)
    engine, _, meter = sim_engine(splits.all, n_auditors=8, accuracy=0.6)
    train(engine, splits, 1)
    for x in splits.test:
        mark = meter.mark()
        trace = route_inference(engine, x, record=False)
        callers = {u.agent_id for u in meter.since(mark)}
        assert callers <= trace.consulted
        assert callers == set(trace.judgments) | {"DM"}


def test_activation_bounds_hold_at_every_node():
    splits = sim_splits(80)
    engine, _, _ = sim_engine(splits.all, n_auditors=8, accuracy=0.6)
    train(engine, splits, 1)
    for x in splits.test:
        trace = route_inference(engine, x, record=False)
        for state in trace.states.values():
            n = len(state.ordered)
            assert state.activation_count <= n
            if n >= 2:
                assert state.activation_count >= 2
                assert state.activation_count % 2 == 0 or state.activation_count == n
            if n >= 2 and len(state.margins) == 1 and state.margins[0] != 0:
                assert state.activation_count == 2


def test_routing_is_deterministic():
    traces = []
    for _ in range(2):
        splits = sim_splits(60, seed=4)
        engine, _, _ = sim_engine(splits.all, seed=4)
        train(engine, splits, 1)
        traces.append([route_inference(engine, x).to_dict() for x in splits.test])
    assert traces[0] == traces[1]


def test_route_requires_built_hierarchy():
    engine, _, _ = sim_engine(make_instances(6))
    with pytest.raises(ValueError):
        route_inference(engine, make_instances(1)[0])
