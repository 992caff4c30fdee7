"""Deterministic stand-in for LLM agents.

Each simulated agent is a noisy oracle over the hidden label: it answers
correctly with probability ``base_accuracy``. Agents in the same correlation
group share a per-instance latent coin, so their errors line up. All
randomness is a hash of (seed, agent, instance, call kind), which makes every
call order-independent and bit-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from ..model import Instance, Judgment, Profile
from .base import Backend, BackendError, Reflection, ReflectionContext, Summary, TokenUsage, UsageMeter
from .embedding import HashingEmbedder


@dataclass(frozen=True)
class SimulatedAgentSpec:
    base_accuracy: float = 0.7
    correlation_group: str | None = None
    corr_strength: float = 0.0
    seed_offset: int = 0

    def __post_init__(self):
        if not 0.0 <= self.base_accuracy <= 1.0:
            raise ValueError("base_accuracy must lie in [0, 1]")
        if not 0.0 <= self.corr_strength <= 1.0:
            raise ValueError("corr_strength must lie in [0, 1]")


def _salient(view: Mapping[str, Any], limit: int = 3) -> list[str]:
    numeric = [(abs(v), k) for k, v in view.items() if isinstance(v, (int, float))]
    numeric.sort(key=lambda p: -p[0])
    names = [k for _, k in numeric[:limit]]
    if len(names) < limit:
        names += [k for k, v in view.items() if not isinstance(v, (int, float))][: limit - len(names)]
    return names


class SimulatedBackend(Backend):
    name = "simulated"

    def __init__(
        self,
        meter: UsageMeter | None = None,
        *,
        seed: int = 0,
        tokens_per_call: int = 100,
        embedding_dim: int = 64,
        specs: Mapping[str, SimulatedAgentSpec] | None = None,
        default_spec: SimulatedAgentSpec | None = None,
        labels: Mapping[str, int] | None = None,
    ):
        super().__init__(meter, embedding_dim)
        if tokens_per_call < 0:
            raise ValueError("tokens_per_call must be nonnegative")
        self.seed = seed
        self.tokens_per_call = tokens_per_call
        self.specs = dict(specs or {})
        self.default_spec = default_spec or SimulatedAgentSpec()
        self.labels: dict[str, int] = dict(labels or {})
        self.embedder = HashingEmbedder(embedding_dim, seed)

    def register(self, instances: Iterable[Instance]) -> None:
        for x in instances:
            if x.label is not None:
                self.labels[x.id] = x.label

    def spec_for(self, agent_id: str) -> SimulatedAgentSpec:
        return self.specs.get(agent_id, self.default_spec)

    def _uniform(self, *parts: Any) -> float:
        key = "|".join(str(p) for p in (self.seed, *parts)).encode()
        return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") / 2.0**64

    def _label(self, agent_id: str, instance_id: str) -> int:
        try:
            return self.labels[instance_id]
        except KeyError:
            raise BackendError(
                "simulated backend has no hidden label for instance", agent_id=agent_id, instance_id=instance_id
            ) from None

    def decide(self, agent_id: str, instance_id: str, kind: str = "judge") -> int:
        spec = self.spec_for(agent_id)
        y = self._label(agent_id, instance_id)
        u = self._uniform(spec.seed_offset, agent_id, instance_id, kind)
        if spec.correlation_group is not None and spec.corr_strength > 0:
            if self._uniform(spec.seed_offset, agent_id, instance_id, kind, "mix") < spec.corr_strength:
                u = self._uniform("group", spec.correlation_group, instance_id, kind)
        correct = u < spec.base_accuracy
        return y if correct else 1 - y

    def _tokens(self, kind: str, agent_id: str, instance_id: str | None = None) -> TokenUsage:
        return self._usage(kind, agent_id, self.tokens_per_call, 0, instance_id)

    def judge(self, agent_id, instance_id, view, profile: Profile, experience, history):
        if not view:
            raise BackendError("empty feature view", agent_id=agent_id, instance_id=instance_id)
        d = self.decide(agent_id, instance_id, "judge")
        names = ", ".join(_salient(view))
        reason = f"{'anomalous' if d else 'consistent'} signals in {names}"
        return Judgment(d, reason), self._tokens("judge", agent_id, instance_id)

    def synthesize(
        self,
        agent_id: str,
        instance_id: str,
        view: Mapping[str, Any],
        summaries: Sequence[Summary],
        experience: Sequence[str],
        confidence: Mapping[str, float],
    ):
        direct = self.decide(agent_id, instance_id, "direct")
        total = 0.0
        for s in summaries:
            total += s.weight * (2 * s.decision - 1)
        total += 1.0 * (2 * direct - 1)
        d = int(total > 0)
        ones = sum(s.decision for s in summaries)
        aligned = [s for s in summaries if s.decision == d]
        if aligned:
            lead = min(aligned, key=lambda s: (-s.weight, s.sub_id)).reason
        else:
            lead = f"own assessment of {', '.join(_salient(view))}"
        if summaries and ones in (0, len(summaries)):
            tally = f"all {len(summaries)} coordinators predict {summaries[0].decision}"
        else:
            tally = f"votes split, {ones} of {len(summaries)} coordinators predict 1"
        reason = f"{tally} (weighted margin {total:+.2f}, own vote {direct}); {lead}"
        return Judgment(d, reason, direct=direct), self._tokens("synthesize", agent_id, instance_id)

    def reflect(self, agent_id: str, context: ReflectionContext):
        if context.mode == "decision":
            p, y = context.predicted.decision, context.truth
            if p == y:
                tag = "confirmed-positive" if y == 1 else "confirmed-negative"
            else:
                tag = "missed-positive" if y == 1 else "false-alarm"
            names = ", ".join(_salient(context.view or {}))
            text = f"{tag} on features {{{names}}}"
        else:
            parts = [t.strip().rstrip(".")[:80] for t in context.fragments]
            text = "heuristic combining " + "; ".join(parts) + "."
        return Reflection(text), self._tokens("reflect", agent_id, context.instance_id)

    def embed(self, agent_id: str, text: str):
        if not text or not text.strip():
            raise BackendError("cannot embed empty text", agent_id=agent_id)
        return self.embedder(text), self._tokens("embed", agent_id)
