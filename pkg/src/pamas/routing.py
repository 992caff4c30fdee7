"""Confidence-guided inference.

Each node activates its two most trusted children, escalates two at a time
while the unweighted majority margin is zero, and recurses depth-first into
activated Coordinators. Agents outside the activation trace make no calls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .aggregation import NoAlignedVoteError, Vote, inherit_reason, majority_margin, signed_sum
from .backends import BackendError, Summary, TokenUsage
from .engine import Engine
from .model import ActionRecord, Instance, Judgment, Role, record_action
from .training import dm_signed_sum

logger = logging.getLogger(__name__)


@dataclass
class RoutingState:
    node_id: str
    ordered: list[tuple[str, float]]
    active: list[str] = field(default_factory=list)
    margins: list[float] = field(default_factory=list)
    decision: int | None = None
    reason: str = ""
    tie: bool = False

    @property
    def activation_count(self) -> int:
        return len(self.active)

    def to_dict(self) -> dict:
        return {
            "node": self.node_id,
            "ordered": [[c, w] for c, w in self.ordered],
            "active": list(self.active),
            "margins": list(self.margins),
            "decision": self.decision,
            "reason": self.reason,
            "tie": self.tie,
        }


@dataclass
class ActivationTrace:
    instance_id: str
    trace_id: str
    states: dict[str, RoutingState] = field(default_factory=dict)
    judgments: dict[str, Judgment] = field(default_factory=dict)
    summaries: list[Summary] = field(default_factory=list)
    final: Judgment | None = None
    score: float = 0.0
    usages: list[TokenUsage] = field(default_factory=list)

    @property
    def auditor_calls(self) -> int:
        return len(self.judgments)

    @property
    def m(self) -> int:
        """Backend calls charged to this instance: activated Auditors plus one synthesize."""
        return self.auditor_calls + 1

    @property
    def consulted(self) -> set[str]:
        out = set(self.judgments)
        for state in self.states.values():
            out.add(state.node_id)
        return out

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "trace_id": self.trace_id,
            "decision": None if self.final is None else self.final.decision,
            "reason": None if self.final is None else self.final.reason,
            "score": self.score,
            "m": self.m,
            "auditors": {k: [j.decision, j.reason] for k, j in sorted(self.judgments.items())},
            "nodes": [self.states[k].to_dict() for k in sorted(self.states)],
        }


def _escalate(state: RoutingState, decisions: dict[str, int], weights: dict[str, float], weighted: bool) -> bool:
    """Margin over the active set; True when routing at this node may stop."""
    if weighted:
        margin = signed_sum([Vote(c, decisions[c], weights[c]) for c in state.active])
    else:
        margin = float(majority_margin([decisions[c] for c in state.active]))
    state.margins.append(margin)
    return margin != 0


def route_group(engine: Engine, node_id: str, instance: Instance, trace: ActivationTrace, record: bool = True):
    """Resolve ``node_id`` by escalating over its children in confidence order."""
    h = engine.hierarchy
    weights = h.weights(node_id)
    kids = h.children(node_id)
    if not kids:
        raise ValueError(f"{node_id} has no children to route over")
    ordered = sorted(((c, weights[c]) for c in kids), key=lambda p: (-p[1], p[0]))
    state = RoutingState(node_id, ordered)
    trace.states[node_id] = state
    decisions: dict[str, int] = {}
    reasons: dict[str, str] = {}
    weighted = engine.hyper.weighted_routing
    position = 0
    while position < len(ordered):
        step = [c for c, _ in ordered[position : position + 2]]
        position += len(step)
        leaves = [h.nodes[c] for c in step if h.nodes[c].role is Role.AUDITOR]
        for node, result in zip(leaves, engine.judge_many(leaves, instance)):
            if isinstance(result, BackendError):
                if record:
                    record_action(node, ActionRecord(instance.id, None, str(result), trace_id=trace.trace_id, failed=True))
                raise result
            trace.judgments[node.id] = result
            decisions[node.id], reasons[node.id] = result.decision, result.reason
            if record:
                record_action(node, ActionRecord(instance.id, result.decision, result.reason, trace_id=trace.trace_id))
        for c in step:
            if c not in decisions:
                sub = route_group(engine, c, instance, trace, record)
                decisions[c], reasons[c] = sub.decision, sub.reason
        state.active.extend(step)
        if _escalate(state, decisions, weights, weighted):
            break
    margin = state.margins[-1]
    if margin == 0:
        state.tie = True
        state.decision = decisions[ordered[0][0]]
        engine.report.warn(f"{node_id} on {instance.id}: exhausted tie, using top child {ordered[0][0]}")
    else:
        state.decision = int(margin > 0)
    votes = [Vote(c, decisions[c], weights[c], reasons[c]) for c in state.active]
    try:
        state.reason = inherit_reason(votes, state.decision)
    except NoAlignedVoteError:
        state.reason = "no aligned subordinate"
    if record and h.nodes[node_id].role is Role.COORDINATOR:
        record_action(
            h.nodes[node_id],
            ActionRecord(
                instance.id,
                state.decision,
                state.reason,
                votes=tuple((v.sub_id, v.decision, v.weight) for v in votes),
                trace_id=trace.trace_id,
                rule="routed-weighted" if weighted else "routed",
                tie=state.tie,
            ),
        )
    return state


def route_inference(engine: Engine, instance: Instance, *, record: bool = True) -> ActivationTrace:
    """Routed pass ending in exactly one decision-maker synthesize call."""
    h = engine.hierarchy
    if not h.built:
        raise ValueError("hierarchy has not been built")
    trace = ActivationTrace(instance.id, engine.next_trace_id("inference") if record else "inference-unrecorded")
    mark = engine.meter.mark()
    dm = h.dm
    with engine.meter.in_phase("inference"):
        top = route_group(engine, dm.id, instance, trace, record)
        weights = h.weights(dm.id)
        for c in top.active:
            sub = trace.states[c]
            trace.summaries.append(Summary(c, sub.decision, sub.reason, weights[c]))
        final = engine.synthesize(instance, trace.summaries)
        trace.final = final
        trace.score = dm_signed_sum(trace.summaries, final)
        if record:
            record_action(
                dm,
                ActionRecord(
                    instance.id,
                    final.decision,
                    final.reason,
                    votes=tuple((s.sub_id, s.decision, s.weight) for s in trace.summaries),
                    trace_id=trace.trace_id,
                    rule="synthesize",
                    direct=final.direct,
                ),
            )
    trace.usages = engine.meter.since(mark)
    return trace
