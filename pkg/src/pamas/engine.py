from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .backends import Backend, BackendError, Summary, UsageMeter
from .model import (
    AgentNode,
    ConfigError,
    ExperienceFragment,
    Hyperparameters,
    Instance,
    Judgment,
    Profile,
    Role,
    project_features,
    validate_profile,
)
from .topology import Hierarchy, ValidationSet

logger = logging.getLogger(__name__)

DM_ID = "DM"


@dataclass
class RunReport:
    """Append-only event log written next to checkpoints."""

    changes: list[dict] = field(default_factory=list)
    corrections: list[dict] = field(default_factory=list)
    evictions: list[dict] = field(default_factory=list)
    retrievals: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def to_dict(self) -> dict:
        return {
            "changes": self.changes,
            "corrections": self.corrections,
            "evictions": self.evictions,
            "retrievals": self.retrievals,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunReport":
        return cls(**{k: list(data.get(k, [])) for k in ("changes", "corrections", "evictions", "retrievals", "warnings")})


@dataclass
class Engine:
    hierarchy: Hierarchy
    hyper: Hyperparameters
    backends: dict[str, Backend]
    meter: UsageMeter
    feature_names: tuple[str, ...]
    report: RunReport = field(default_factory=RunReport)
    epochs_done: int = 0
    history: list[dict] = field(default_factory=list)
    trace_counter: int = 0
    workers: int = 1
    # (agent id, instance id, experience version) -> validation decision
    val_cache: dict[tuple[str, str, int], int] = field(default_factory=dict)

    @property
    def dm(self) -> AgentNode:
        return self.hierarchy.dm

    @property
    def auditors(self) -> list[AgentNode]:
        return sorted((n for n in self.hierarchy.nodes.values() if n.role is Role.AUDITOR), key=lambda n: n.id)

    def backend_for(self, node: AgentNode) -> Backend:
        try:
            return self.backends[node.backend]
        except KeyError:
            raise ConfigError(f"agent {node.id} is bound to unknown backend {node.backend!r}") from None

    def next_trace_id(self, phase: str) -> str:
        self.trace_counter += 1
        return f"{phase}-{self.trace_counter}"

    def add_fragment(self, node: AgentNode, fragment: ExperienceFragment) -> None:
        evicted = node.experience.append(fragment)
        if evicted is not None:
            self.report.evictions.append({"agent": node.id, "fragment": evicted.id, "text": evicted.text})

    def judge(self, node: AgentNode, instance: Instance) -> Judgment:
        view = project_features(instance, node.profile)
        backend = self.backend_for(node)
        judgment, _ = backend.judge(
            node.id, instance.id, view, node.profile, node.experience.texts()[-5:], node.actions.summary()
        )
        return judgment

    def judge_many(self, nodes: Sequence[AgentNode], instance: Instance) -> list[Judgment | BackendError]:
        """Judge with every node; failures come back in place of their judgment."""

        def one(node):
            try:
                return self.judge(node, instance)
            except BackendError as exc:
                return exc

        if self.workers > 1 and len(nodes) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(one, nodes))
        return [one(n) for n in nodes]

    def synthesize(self, instance: Instance, summaries: Sequence[Summary]) -> Judgment:
        dm = self.dm
        view = project_features(instance, dm.profile)
        judgment, _ = self.backend_for(dm).synthesize(
            dm.id, instance.id, view, summaries, dm.experience.texts()[-5:], dict(dm.confidence.weights)
        )
        return judgment

    def validation_set(self, instances: Sequence[Instance], phase: str = "validation") -> ValidationSet:
        """Prediction vectors of every auditor (attached or free) on ``instances``."""
        labels = [x.label for x in instances]
        if any(y is None for y in labels):
            raise ValueError("validation instances must be labeled")
        vectors = {}
        with self.meter.in_phase(phase):
            for node in self.auditors:
                version = node.experience.appended
                row = np.empty(len(instances), dtype=np.int8)
                for i, x in enumerate(instances):
                    key = (node.id, x.id, version)
                    if key not in self.val_cache:
                        self.val_cache[key] = self.judge(node, x).decision
                    row[i] = self.val_cache[key]
                vectors[node.id] = row
        return ValidationSet([x.id for x in instances], np.array(labels, dtype=np.int8), vectors)


def assign_profiles(
    feature_names: Sequence[str], count: int, subset_size: int, seed: int = 0
) -> list[Profile]:
    """Seeded distinct feature subsets, each kept in dataset column order."""
    names = list(feature_names)
    if not 0 < subset_size < len(names):
        raise ConfigError("auditor subset size must be in [1, number of features - 1]")
    rng = np.random.default_rng([seed, 7919])
    seen, profiles = set(), []
    attempts = 0
    while len(profiles) < count:
        attempts += 1
        pick = tuple(sorted(rng.choice(len(names), subset_size, replace=False)))
        if pick in seen and attempts < 100 * count:
            continue
        seen.add(pick)
        chosen = tuple(names[i] for i in pick)
        profiles.append(Profile(f"auditor specializing in {', '.join(chosen)}", chosen))
    return profiles


def make_engine(
    feature_names: Sequence[str],
    profiles: Sequence[Profile],
    hyper: Hyperparameters,
    backends: Mapping[str, Backend],
    meter: UsageMeter,
    *,
    auditor_backends: Sequence[str] | None = None,
    dm_backend: str = "default",
    workers: int = 1,
) -> Engine:
    """Fresh engine holding unconnected auditors and a decision maker."""
    feature_names = tuple(feature_names)
    auditors = []
    for i, profile in enumerate(profiles):
        validate_profile(profile, Role.AUDITOR, feature_names)
        binding = auditor_backends[i] if auditor_backends else "default"
        auditors.append(AgentNode.auditor(f"A{i:02d}", profile, binding, hyper.experience_capacity))
    dm_profile = Profile("final decision expert with full context", feature_names)
    dm = AgentNode.decision_maker(DM_ID, dm_profile, dm_backend, hyper.experience_capacity)
    nodes: dict[str, Any] = {a.id: a for a in auditors}
    nodes[dm.id] = dm
    level = {a.id: 0 for a in auditors}
    level[dm.id] = len(hyper.layer_spec) + 1
    hierarchy = Hierarchy(nodes, dm.id, level)
    for name in {a.backend for a in auditors} | {dm_backend}:
        if name not in backends:
            raise ConfigError(f"no backend named {name!r}")
    return Engine(hierarchy, hyper, dict(backends), meter, feature_names, workers=workers)
