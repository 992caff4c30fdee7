"""Initialization, forward pass, targeted correction and the epoch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .aggregation import NoAlignedVoteError, Vote, inherit_reason, weighted_vote
from .backends import BackendError, ReflectionContext, Summary, TokenUsage, self_reflect
from .data import Splits
from .engine import Engine
from .metrics import MetricsReport, compute_metrics, score_from_sum
from .model import (
    ActionRecord,
    AgentNode,
    ExperienceFragment,
    Instance,
    Judgment,
    Origin,
    project_features,
    record_action,
    top_k_fragments,
)
from .topology import adapt_topology, build_hierarchy

logger = logging.getLogger(__name__)


@dataclass
class CoordinatorOutcome:
    decision: int
    signed_sum: float
    votes: list[Vote]
    reason: str
    tie: bool


@dataclass
class ForwardTrace:
    instance_id: str
    trace_id: str
    judgments: dict[str, Judgment] = field(default_factory=dict)
    coordinators: dict[str, CoordinatorOutcome] = field(default_factory=dict)
    summaries: list[Summary] = field(default_factory=list)
    final: Judgment | None = None
    score: float = 0.0
    failed: bool = False
    error: str | None = None
    usages: list[TokenUsage] = field(default_factory=list)

    def decision_of(self, node_id: str) -> int:
        if node_id in self.coordinators:
            return self.coordinators[node_id].decision
        return self.judgments[node_id].decision

    def reason_of(self, node_id: str) -> str:
        if node_id in self.coordinators:
            return self.coordinators[node_id].reason
        return self.judgments[node_id].reason

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.judgments or node_id in self.coordinators

    @property
    def agent_count(self) -> int:
        return len(self.judgments) + len(self.coordinators)


@dataclass
class CorrectionReport:
    instance_id: str
    truth: int
    corrected: list[str] = field(default_factory=list)
    deltas: dict[str, float] = field(default_factory=dict)
    fragments: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.corrected

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "truth": self.truth,
            "corrected": self.corrected,
            "deltas": self.deltas,
            "fragments": self.fragments,
        }


def dm_signed_sum(summaries: Sequence[Summary], judgment: Judgment) -> float:
    """Weighted coordinator votes plus the decision maker's own vote at weight 1."""
    total = 0.0
    for s in summaries:
        total += s.weight * (2 * s.decision - 1)
    own = judgment.direct if judgment.direct is not None else judgment.decision
    return total + (2 * own - 1)


# -- initialization --------------------------------------------------------


def dm_self_learning(engine: Engine, instances: Sequence[Instance]) -> int:
    """Decision maker judges each labeled instance directly and reflects on it."""
    dm = engine.dm
    backend = engine.backend_for(dm)
    added = 0
    with engine.meter.in_phase("init"):
        for x in instances:
            if x.label is None:
                raise ValueError(f"instance {x.id} has no label")
            try:
                guess = engine.synthesize(x, [])
                ctx = ReflectionContext(
                    "decision", x.id, project_features(x, dm.profile), guess, x.label, current=tuple(dm.experience.texts()[-3:])
                )
                fragment, _, _ = self_reflect(backend, dm.id, ctx, dm.experience.new_id())
            except BackendError as exc:
                engine.report.warn(f"self-learning skipped {x.id}: {exc}")
                continue
            engine.add_fragment(dm, replace(fragment, origin=Origin.SELF_LEARNED))
            added += 1
    return added


def _distill(engine: Engine, auditor: AgentNode, query: np.ndarray, k: int, exclude: set[str], phase: str) -> ExperienceFragment | None:
    pool = engine.dm.experience.fragments
    available = [f for f in pool if f.id not in exclude]
    if k > len(available):
        engine.report.warn(f"{auditor.id}: top_k={k} exceeds {len(available)} available fragments; retrieving all")
    hits = top_k_fragments(query, pool, k, exclude)
    if not hits:
        engine.report.warn(f"{auditor.id}: nothing left to retrieve")
        return None
    ctx = ReflectionContext(
        "merge", fragments=tuple(f.text for f, _ in hits), current=tuple(auditor.experience.texts()[-3:])
    )
    fragment, _, _ = self_reflect(engine.backend_for(auditor), auditor.id, ctx, auditor.experience.new_id())
    fragment = replace(fragment, origin=Origin.RETRIEVED)
    engine.add_fragment(auditor, fragment)
    ids = [f.id for f, _ in hits]
    auditor.distilled.extend(ids)
    engine.report.retrievals.append({"agent": auditor.id, "phase": phase, "retrieved": ids, "fragment": fragment.id})
    return fragment


def auditor_bootstrap(engine: Engine, auditor: AgentNode, k: int | None = None) -> ExperienceFragment | None:
    """Seed an auditor's memory from the decision maker's most relevant fragments."""
    k = k or engine.hyper.top_k
    if not engine.dm.experience.fragments:
        raise ValueError("decision maker experience is empty; run self-learning first")
    with engine.meter.in_phase("init"):
        query, _ = engine.backend_for(auditor).embed(auditor.id, auditor.profile.render())
        return _distill(engine, auditor, query, k, set(), "bootstrap")


def auditor_epoch_refresh(engine: Engine, auditor: AgentNode, k: int | None = None) -> ExperienceFragment | None:
    """Query the decision maker's memory with the centroid of the auditor's own fragments."""
    k = k or engine.hyper.top_k
    if not engine.dm.experience.fragments:
        engine.report.warn(f"{auditor.id}: decision maker memory empty, refresh skipped")
        return None
    own = auditor.experience.fragments
    with engine.meter.in_phase("refresh"):
        centroid = np.mean([f.embedding for f in own], axis=0) if own else None
        if centroid is None or np.linalg.norm(centroid) == 0:
            query, _ = engine.backend_for(auditor).embed(auditor.id, auditor.profile.render())
        else:
            query = centroid / np.linalg.norm(centroid)
        return _distill(engine, auditor, query, k, set(auditor.distilled), "refresh")


def initialize(engine: Engine, splits: Splits, self_learning_limit: int | None = None) -> None:
    train = splits.train if self_learning_limit is None else splits.train[:self_learning_limit]
    dm_self_learning(engine, train)
    for auditor in engine.auditors:
        try:
            auditor_bootstrap(engine, auditor)
        except BackendError as exc:
            engine.report.warn(f"bootstrap failed for {auditor.id}: {exc}")
    validation = engine.validation_set(splits.validation)
    engine.hierarchy = build_hierarchy(engine.auditors, engine.dm, validation, engine.hyper)


# -- forward pass ----------------------------------------------------------


def forward_pass(engine: Engine, instance: Instance, *, record: bool = True, phase: str = "forward") -> ForwardTrace:
    """Bottom-up evaluation with every attached agent active."""
    h = engine.hierarchy
    trace = ForwardTrace(instance.id, engine.next_trace_id(phase) if record else f"{phase}-unrecorded")
    mark = engine.meter.mark()

    def log(node: AgentNode, **fields) -> None:
        if record:
            record_action(node, ActionRecord(instance.id, trace_id=trace.trace_id, **fields))

    with engine.meter.in_phase(phase):
        layers = h.layers()
        auditors = [h.nodes[a] for a in layers[0]]
        for node, result in zip(auditors, engine.judge_many(auditors, instance)):
            if isinstance(result, BackendError):
                log(node, decision=None, reason=str(result), failed=True)
                trace.failed, trace.error = True, f"{node.id}: {result}"
            else:
                trace.judgments[node.id] = result
                log(node, decision=result.decision, reason=result.reason)
        if trace.failed:
            trace.usages = engine.meter.since(mark)
            return trace
        for layer in layers[1:-1]:
            for cid in layer:
                weights = h.weights(cid)
                votes = [Vote(k, trace.decision_of(k), weights[k], trace.reason_of(k)) for k in h.children(cid)]
                decision, total = weighted_vote(votes)
                try:
                    reason = inherit_reason(votes, decision)
                except NoAlignedVoteError:
                    reason = "degenerate confidence state: no aligned subordinate"
                    engine.report.warn(f"{cid} on {instance.id}: {reason}")
                outcome = CoordinatorOutcome(decision, total, votes, reason, total == 0)
                trace.coordinators[cid] = outcome
                log(
                    h.nodes[cid],
                    decision=decision,
                    reason=reason,
                    votes=tuple((v.sub_id, v.decision, v.weight) for v in votes),
                    rule="weighted",
                    tie=outcome.tie,
                )
        dm = h.dm
        weights = h.weights(dm.id)
        trace.summaries = [Summary(c, trace.decision_of(c), trace.reason_of(c), weights[c]) for c in h.children(dm.id)]
        try:
            final = engine.synthesize(instance, trace.summaries)
        except BackendError as exc:
            log(dm, decision=None, reason=str(exc), failed=True)
            trace.failed, trace.error = True, f"{dm.id}: {exc}"
            trace.usages = engine.meter.since(mark)
            return trace
        trace.final = final
        trace.score = dm_signed_sum(trace.summaries, final)
        log(
            dm,
            decision=final.decision,
            reason=final.reason,
            votes=tuple((s.sub_id, s.decision, s.weight) for s in trace.summaries),
            rule="synthesize",
            direct=final.direct,
        )
    trace.usages = engine.meter.since(mark)
    return trace


# -- backward targeted correction -----------------------------------------


def confidence_update(weight: float, reflect_term: float, historical_accuracy: float, alpha: float) -> float:
    """Exponential moving average toward reflect_term + historical_accuracy.

    Written as an increment, (1 - alpha) * w + alpha * target == w + alpha * (target - w),
    which is exact whenever the step is.
    """
    return weight + alpha * ((reflect_term + historical_accuracy) - weight)


def _update_children(engine: Engine, owner: AgentNode, trace: ForwardTrace, y: int, report: CorrectionReport, scores=None):
    h = engine.hierarchy
    for child in h.children(owner.id):
        if child not in trace:
            continue  # admitted after this trace was produced
        indicator = 1.0 if trace.decision_of(child) == y else 0.0
        f_ref = scores.get(child, indicator) if scores else indicator
        hist = h.val_accuracy.get(child, 1.0)
        old = owner.confidence[child]
        new = confidence_update(old, f_ref, hist, engine.hyper.alpha)
        owner.confidence[child] = new
        report.deltas[f"{owner.id}->{child}"] = new - old


def targeted_correction(engine: Engine, trace: ForwardTrace, instance: Instance) -> CorrectionReport:
    """Errors-only, top-down update of the decision maker and erring Coordinators."""
    y = instance.label
    if y is None:
        raise ValueError(f"instance {instance.id} has no label")
    report = CorrectionReport(instance.id, y)
    if trace.failed or trace.final is None or trace.final.decision == y:
        return report
    h = engine.hierarchy
    dm = h.dm
    with engine.meter.in_phase("correction"):
        children = tuple(s for s in trace.summaries if s.sub_id in dm.confidence)
        ctx = ReflectionContext(
            "decision",
            instance.id,
            project_features(instance, dm.profile),
            trace.final,
            y,
            current=tuple(dm.experience.texts()[-3:]),
            children=children,
        )
        scores = None
        try:
            fragment, reflection, _ = self_reflect(engine.backend_for(dm), dm.id, ctx, dm.experience.new_id())
            engine.add_fragment(dm, fragment)
            report.fragments.append(fragment.id)
            scores = reflection.adjustments
        except BackendError as exc:
            engine.report.warn(f"decision maker reflection failed on {instance.id}: {exc}")
        report.corrected.append(dm.id)
        _update_children(engine, dm, trace, y, report, scores)
        attached = set(h.attached())
        for cid in sorted(trace.coordinators, key=lambda c: (-h.level[c], c)):
            if cid in attached and trace.coordinators[cid].decision != y:
                report.corrected.append(cid)
                _update_children(engine, h.nodes[cid], trace, y, report)
    return report


# -- epoch loop ------------------------------------------------------------


def predict_split(engine: Engine, instances: Sequence[Instance], phase: str = "eval") -> list[tuple[float, int, int]]:
    """(score, decision, label) per labeled instance under a full, unrecorded pass."""
    out = []
    for x in instances:
        trace = forward_pass(engine, x, record=False, phase=phase)
        if trace.failed:
            engine.report.warn(f"evaluation skipped {x.id}: {trace.error}")
            continue
        out.append((score_from_sum(trace.score), trace.final.decision, x.label))
    return out


def evaluate_split(engine: Engine, instances: Sequence[Instance], phase: str = "eval") -> MetricsReport:
    return compute_metrics(predict_split(engine, instances, phase))


def run_epoch(engine: Engine, splits: Splits, epoch: int, *, adapt: bool = True, correct: bool = True) -> dict:
    hyper = engine.hyper
    mark = engine.meter.mark()
    rng = np.random.default_rng([hyper.seed, epoch])
    order = [splits.train[i] for i in rng.permutation(len(splits.train))]
    dm_errors = corrected_agents = correction_records = 0
    changes = {"prune": 0, "expand": 0, "skip": 0}
    for b, start in enumerate(range(0, len(order), hyper.batch_size)):
        batch = order[start : start + hyper.batch_size]
        traces = [forward_pass(engine, x) for x in batch]
        if adapt:
            validation = engine.validation_set(splits.validation)
            for entry in adapt_topology(engine.hierarchy, validation, hyper, epoch, b):
                engine.report.changes.append(entry.to_dict())
                changes[entry.action] += 1
        for trace, x in zip(traces, batch):
            if trace.failed:
                engine.report.warn(f"epoch {epoch}: skipped correction for {x.id} ({trace.error})")
                continue
            if trace.final.decision != x.label:
                dm_errors += 1
            if not correct:
                continue
            rep = targeted_correction(engine, trace, x)
            if not rep.empty:
                correction_records += 1
                corrected_agents += len(rep.corrected)
                engine.report.corrections.append({"epoch": epoch, **rep.to_dict()})
    for auditor in (engine.hierarchy.nodes[a] for a in engine.hierarchy.active_auditors()):
        try:
            auditor_epoch_refresh(engine, auditor)
        except BackendError as exc:
            engine.report.warn(f"refresh failed for {auditor.id}: {exc}")
    metrics = evaluate_split(engine, splits.validation)
    totals = engine.meter.totals(mark)
    entry = {
        "epoch": epoch,
        "validation": metrics.to_dict(),
        "train_errors": dm_errors,
        "train_error_rate": dm_errors / len(order) if order else 0.0,
        "correction_records": correction_records,
        "corrected_agents": corrected_agents,
        "active_auditors": len(engine.hierarchy.active_auditors()),
        "active_coordinators": len(engine.hierarchy.active_coordinators()),
        "topology_changes": changes,
        "tokens": dict(sorted(totals.per_phase.items())),
    }
    engine.history.append(entry)
    engine.epochs_done = epoch
    return entry


def train(
    engine: Engine,
    splits: Splits,
    epochs: int,
    *,
    adapt: bool = True,
    correct: bool = True,
    self_learning_limit: int | None = None,
    on_epoch=None,
) -> list[dict]:
    """Initialize if needed, then run epochs until ``epochs`` have completed."""
    if any(x.label is None for x in splits.train + splits.validation):
        raise ValueError("training and validation splits must be labeled")
    if not engine.hierarchy.built:
        initialize(engine, splits, self_learning_limit)
    for epoch in range(engine.epochs_done + 1, epochs + 1):
        entry = run_epoch(engine, splits, epoch, adapt=adapt, correct=correct)
        logger.info("epoch %d: validation accuracy %.4f", epoch, entry["validation"]["accuracy"])
        if on_epoch is not None:
            on_epoch(engine, entry)
    return engine.history
