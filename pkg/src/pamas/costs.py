"""Closed-form token cost model, meter reconciliation and a flat-majority baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .aggregation import majority_margin
from .backends import MeterTotals
from .engine import Engine
from .model import Instance
from .routing import route_inference
from .training import forward_pass, targeted_correction

VARIANTS = ("TA", "TA+TC", "TA+TC+CR", "chain", "star", "fully-connected", "layered", "tree")

Number = int | float | str | Fraction


def exact(x: Number) -> Fraction:
    """Exact rational; floats go through their shortest repr so 0.2 means 1/5."""
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class CostModelParams:
    T: Number = 100
    N: Number = 1
    p_err: Number = 0
    n_A: Number = 0
    n_C: Number = 0
    n: Number = 0
    layers: tuple[Number, ...] = ()
    m: Number = 0

    def __post_init__(self):
        for name in ("T", "N", "p_err", "n_A", "n_C", "n", "m"):
            if exact(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if any(exact(x) < 0 for x in self.layers):
            raise ValueError("layer sizes must be nonnegative")
        if exact(self.p_err) > 1:
            raise ValueError("p_err must lie in [0, 1]")


def cost_model_expected(params: CostModelParams, variant: str) -> tuple[Fraction, Fraction]:
    """(training, inference) expected tokens for ``variant``, in exact arithmetic."""
    T, N, p = exact(params.T), exact(params.N), exact(params.p_err)
    nA, nC, n, m = exact(params.n_A), exact(params.n_C), exact(params.n), exact(params.m)
    forward = nA + 1
    if variant == "TA":
        return N * (forward + (nA + nC)) * T, forward * T
    if variant == "TA+TC":
        return N * (forward + p * (nA + nC)) * T, forward * T
    if variant == "TA+TC+CR":
        return N * (forward + p * (nA + nC)) * T, m * T
    if variant in ("chain", "star", "tree"):
        return 2 * N * n * T, n * T
    if variant == "fully-connected":
        return 2 * N * n * n * T, n * n * T
    if variant == "layered":
        total = sum((exact(x) for x in params.layers), Fraction(0))
        return 2 * N * total * T, total * T
    raise ValueError(f"unknown cost variant {variant!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class CostMapping:
    """How idealized cost units translate to backend calls in this implementation.

    A forward pass costs one call per active Auditor plus one decision-maker
    synthesize. A refinement unit is charged per erring instance: the decision
    maker reflects and embeds the new fragment, and confidence updates need no
    call. Validation and epoch-refresh calls fall outside the closed forms and
    are reported separately.
    """

    forward_calls: str = "n_A + 1 per instance"
    refine_calls_per_error: int = 2
    training_phases: tuple[str, ...] = ("forward", "correction")

    def to_dict(self) -> dict:
        return {
            "forward_calls": self.forward_calls,
            "refine_calls_per_error": self.refine_calls_per_error,
            "training_phases": list(self.training_phases),
        }


@dataclass
class ReconciliationRow:
    quantity: str
    measured: int
    expected: Fraction
    idealized: Fraction | None = None

    @property
    def match(self) -> bool:
        return Fraction(self.measured) == self.expected

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "measured": self.measured,
            "expected": str(self.expected),
            "idealized": None if self.idealized is None else str(self.idealized),
            "match": self.match,
        }


@dataclass
class ReconciliationReport:
    rows: list[ReconciliationRow]
    mapping: CostMapping
    window: dict = field(default_factory=dict)
    extra_phases: dict[str, int] = field(default_factory=dict)

    @property
    def all_match(self) -> bool:
        return all(r.match for r in self.rows)

    def row(self, quantity: str) -> ReconciliationRow:
        return next(r for r in self.rows if r.quantity == quantity)

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "mapping": self.mapping.to_dict(),
            "window": self.window,
            "extra_phases": self.extra_phases,
            "all_match": self.all_match,
        }


def reconcile_meter(
    measured: MeterTotals,
    *,
    T: int,
    N: int,
    n_A: int,
    n_C: int,
    errors: int,
    inferences: int = 0,
    routed_calls: int | None = None,
    mapping: CostMapping | None = None,
) -> ReconciliationReport:
    """Compare metered phase totals against the closed forms under ``mapping``.

    ``routed_calls`` is the sum of m over routed inferences, read from the
    activation traces.
    """
    mapping = mapping or CostMapping()
    phase = measured.per_phase
    p_err = Fraction(errors, N) if N else Fraction(0)
    params = CostModelParams(T=T, N=N, p_err=p_err, n_A=n_A, n_C=n_C)
    ideal_train, _ = cost_model_expected(params, "TA+TC")
    forward_expected = Fraction(N * (n_A + 1) * T)
    refine_expected = Fraction(errors * mapping.refine_calls_per_error * T)
    rows = [
        ReconciliationRow("forward", phase.get("forward", 0), forward_expected, forward_expected),
        ReconciliationRow("refinement", phase.get("correction", 0), refine_expected, ideal_train - forward_expected),
        ReconciliationRow(
            "training",
            sum(phase.get(p, 0) for p in mapping.training_phases),
            forward_expected + refine_expected,
            ideal_train,
        ),
    ]
    if inferences:
        full = Fraction(inferences * (n_A + 1) * T)
        rows.append(ReconciliationRow("full-inference", phase.get("eval", 0), full, full))
    if routed_calls is not None:
        routed = Fraction(routed_calls * T)
        rows.append(ReconciliationRow("routed-inference", phase.get("inference", 0), routed, routed))
    known = {"forward", "correction", "eval", "inference"}
    extra = {k: v for k, v in sorted(phase.items()) if k not in known}
    window = {"T": T, "N": N, "n_A": n_A, "n_C": n_C, "errors": errors, "p_err": str(p_err), "inferences": inferences}
    return ReconciliationReport(rows, mapping, window, extra)


def run_cost_check(
    engine: Engine, instances: Sequence[Instance], *, tokens_per_call: int, correct: bool = True
) -> ReconciliationReport:
    """Measure one frozen-topology training window plus full and routed inference.

    Mutates the engine's memories through corrections; run it on a scratch copy
    when the state must be preserved.
    """
    if not instances:
        raise ValueError("cost check needs at least one instance")
    h = engine.hierarchy
    n_A, n_C = len(h.active_auditors()), len(h.active_coordinators())
    mark = engine.meter.mark()
    errors = 0
    for x in instances:
        trace = forward_pass(engine, x, phase="forward")
        if trace.failed:
            raise RuntimeError(f"forward pass failed on {x.id}: {trace.error}")
        if trace.final.decision != x.label:
            errors += 1
            if correct:
                targeted_correction(engine, trace, x)
    for x in instances:
        forward_pass(engine, x, record=False, phase="eval")
    routed = sum(route_inference(engine, x, record=False).m for x in instances)
    totals = engine.meter.totals(mark)
    mapping = CostMapping(refine_calls_per_error=2 if correct else 0)
    return reconcile_meter(
        totals,
        T=tokens_per_call,
        N=len(instances),
        n_A=n_A,
        n_C=n_C,
        errors=errors,
        inferences=len(instances),
        routed_calls=routed,
        mapping=mapping,
    )


def flat_majority(decisions: Sequence[int]) -> int:
    """Unweighted majority; a tie resolves to 0."""
    return int(majority_margin(decisions) > 0)


def flat_majority_baseline(engine: Engine, instance: Instance, auditor_ids: Sequence[str] | None = None) -> int:
    nodes = engine.auditors if auditor_ids is None else [engine.hierarchy.nodes[a] for a in auditor_ids]
    if not nodes:
        raise ValueError("baseline needs at least one auditor")
    with engine.meter.in_phase("baseline"):
        results = engine.judge_many(nodes, instance)
    for r in results:
        if isinstance(r, Exception):
            raise r
    return flat_majority([r.decision for r in results])
