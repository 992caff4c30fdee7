from __future__ import annotations

import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from ..model import ExperienceFragment, Judgment, Origin, PamasError, Profile

CALL_KINDS = ("judge", "synthesize", "reflect", "embed")


class BackendError(PamasError):
    """A judgment provider failed; ``meta`` carries call details."""

    def __init__(self, message: str, *, raw: str | None = None, **meta: Any):
        super().__init__(message)
        self.raw = raw
        self.meta = meta


class ParseError(BackendError):
    pass


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int
    kind: str
    agent_id: str
    phase: str = ""
    instance_id: str | None = None

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be nonnegative")
        if self.kind not in CALL_KINDS:
            raise ValueError(f"unknown call kind {self.kind!r}")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass
class MeterTotals:
    grand: int = 0
    calls: int = 0
    per_agent: dict[str, int] = field(default_factory=dict)
    per_kind: dict[str, int] = field(default_factory=dict)
    per_phase: dict[str, int] = field(default_factory=dict)
    calls_per_kind: dict[str, int] = field(default_factory=dict)
    calls_per_phase: dict[str, int] = field(default_factory=dict)


def meter(usage_log: Sequence[TokenUsage]) -> MeterTotals:
    per_agent: dict[str, int] = defaultdict(int)
    per_kind: dict[str, int] = defaultdict(int)
    per_phase: dict[str, int] = defaultdict(int)
    calls_kind: dict[str, int] = defaultdict(int)
    calls_phase: dict[str, int] = defaultdict(int)
    grand = 0
    for u in usage_log:
        per_agent[u.agent_id] += u.total
        per_kind[u.kind] += u.total
        per_phase[u.phase] += u.total
        calls_kind[u.kind] += 1
        calls_phase[u.phase] += 1
        grand += u.total
    return MeterTotals(
        grand, len(usage_log), dict(per_agent), dict(per_kind), dict(per_phase), dict(calls_kind), dict(calls_phase)
    )


class UsageMeter:
    """Append-only usage log shared by all backends of one engine."""

    def __init__(self):
        self._log: list[TokenUsage] = []
        self._lock = threading.Lock()
        self.phase = "default"

    def emit(self, usage: TokenUsage) -> TokenUsage:
        if not usage.phase:
            usage = replace(usage, phase=self.phase)
        with self._lock:
            self._log.append(usage)
        return usage

    @contextmanager
    def in_phase(self, phase: str):
        previous, self.phase = self.phase, phase
        try:
            yield self
        finally:
            self.phase = previous

    @property
    def log(self) -> list[TokenUsage]:
        with self._lock:
            return list(self._log)

    def mark(self) -> int:
        return len(self._log)

    def since(self, mark: int) -> list[TokenUsage]:
        with self._lock:
            return self._log[mark:]

    def totals(self, since: int = 0) -> MeterTotals:
        return meter(self.since(since))


@dataclass(frozen=True)
class Summary:
    """One Coordinator's contribution to the decision maker."""

    sub_id: str
    decision: int
    reason: str
    weight: float


@dataclass(frozen=True)
class ReflectionContext:
    """Input to a reflection call.

    ``mode`` is ``"decision"`` for contrasting a prediction with ground truth
    and ``"merge"`` for distilling retrieved fragments.
    """

    mode: str
    instance_id: str | None = None
    view: Mapping[str, Any] | None = None
    predicted: Judgment | None = None
    truth: int | None = None
    fragments: tuple[str, ...] = ()
    current: tuple[str, ...] = ()
    children: tuple[Summary, ...] = ()

    def __post_init__(self):
        if self.mode not in ("decision", "merge"):
            raise ValueError(f"unknown reflection mode {self.mode!r}")
        if self.mode == "decision" and (self.predicted is None or self.truth is None):
            raise ValueError("decision reflection needs a prediction and ground truth")
        if self.mode == "merge" and not self.fragments:
            raise ValueError("merge reflection needs at least one fragment")


@dataclass(frozen=True)
class Reflection:
    text: str
    # Per-child reflection values in [0, 1], when the backend provides them.
    adjustments: dict[str, float] | None = None


class Backend:
    """Judgment provider. Every call emits exactly one TokenUsage to ``meter``."""

    name = "backend"

    def __init__(self, meter: UsageMeter | None = None, embedding_dim: int = 64):
        self.meter = meter if meter is not None else UsageMeter()
        self.embedding_dim = embedding_dim

    def judge(
        self,
        agent_id: str,
        instance_id: str,
        view: Mapping[str, Any],
        profile: Profile,
        experience: Sequence[str],
        history: str,
    ) -> tuple[Judgment, TokenUsage]:
        raise NotImplementedError

    def synthesize(
        self,
        agent_id: str,
        instance_id: str,
        view: Mapping[str, Any],
        summaries: Sequence[Summary],
        experience: Sequence[str],
        confidence: Mapping[str, float],
    ) -> tuple[Judgment, TokenUsage]:
        raise NotImplementedError

    def reflect(self, agent_id: str, context: ReflectionContext) -> tuple[Reflection, TokenUsage]:
        raise NotImplementedError

    def embed(self, agent_id: str, text: str) -> tuple[np.ndarray, TokenUsage]:
        raise NotImplementedError

    def _usage(self, kind, agent_id, prompt, completion=0, instance_id=None) -> TokenUsage:
        return self.meter.emit(TokenUsage(prompt, completion, kind, agent_id, instance_id=instance_id))


def self_reflect(
    backend: Backend, agent_id: str, context: ReflectionContext, fragment_id: str
) -> tuple[ExperienceFragment, Reflection, list[TokenUsage]]:
    """Reflect, then embed the resulting sentence into a fragment.

    A failed embedding aborts the fragment; nothing partial is returned.
    """
    reflection, u1 = backend.reflect(agent_id, context)
    vector, u2 = backend.embed(agent_id, reflection.text)
    fragment = ExperienceFragment(fragment_id, reflection.text, vector, Origin.REFLECTED)
    return fragment, reflection, [u1, u2]
