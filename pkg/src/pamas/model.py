"""Domain types shared by every part of the engine.

Agents, their profiles and the three memory kinds live here, together with
feature projection and the small amount of bookkeeping the memories need.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np

FeatureValue = Union[float, str]

NO_REASON = "no reason given"


class PamasError(Exception):
    """Base class for engine errors."""


class ConfigError(PamasError):
    pass


class DataError(PamasError):
    pass


class MissingFeatureError(DataError):
    def __init__(self, name: str):
        super().__init__(f"missing feature: {name!r}")
        self.feature = name


class Role(str, enum.Enum):
    AUDITOR = "auditor"
    COORDINATOR = "coordinator"
    DECISION_MAKER = "decision_maker"


class Origin(str, enum.Enum):
    SELF_LEARNED = "self-learned"
    RETRIEVED = "retrieved"
    REFLECTED = "reflected"


@dataclass(frozen=True)
class Instance:
    id: str
    features: Mapping[str, FeatureValue]
    label: int | None = None

    def __post_init__(self):
        if not str(self.id):
            raise DataError("instance id must be nonempty")
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.features)


@dataclass(frozen=True)
class Judgment:
    decision: int
    reason: str = NO_REASON
    # The decision maker's own direct vote, when the backend exposes it.
    direct: int | None = None

    def __post_init__(self):
        if self.decision not in (0, 1):
            raise ValueError(f"decision must be 0 or 1, got {self.decision!r}")
        if not self.reason or not self.reason.strip():
            object.__setattr__(self, "reason", NO_REASON)


@dataclass(frozen=True)
class Profile:
    persona: str
    features: tuple[str, ...] = ()

    def render(self) -> str:
        return "observed dimensions: " + ", ".join(self.features)


@dataclass(frozen=True)
class ExperienceFragment:
    id: str
    text: str
    embedding: np.ndarray
    origin: Origin = Origin.REFLECTED

    def __post_init__(self):
        vec = np.asarray(self.embedding, dtype=float)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or abs(norm - 1.0) > 1e-9:
            raise ValueError(f"fragment embedding must be unit norm, got {norm}")
        object.__setattr__(self, "embedding", vec)

    def __eq__(self, other):
        if not isinstance(other, ExperienceFragment):
            return NotImplemented
        return (
            self.id == other.id
            and self.text == other.text
            and self.origin == other.origin
            and np.array_equal(self.embedding, other.embedding)
        )

    __hash__ = None


@dataclass
class ExperienceMemory:
    owner: str
    capacity: int = 256
    fragments: list[ExperienceFragment] = field(default_factory=list)
    # Count of fragments ever appended; drives fragment ids and cache keys.
    appended: int = 0

    def new_id(self) -> str:
        return f"{self.owner}#{self.appended + 1}"

    def append(self, fragment: ExperienceFragment) -> ExperienceFragment | None:
        """Append a fragment, returning the evicted oldest one if over capacity."""
        if len(fragment.embedding) and self.fragments:
            if len(fragment.embedding) != len(self.fragments[0].embedding):
                raise ValueError("embedding dimension mismatch")
        self.fragments.append(fragment)
        self.appended += 1
        if len(self.fragments) > self.capacity:
            return self.fragments.pop(0)
        return None

    def __len__(self) -> int:
        return len(self.fragments)

    def texts(self) -> list[str]:
        return [f.text for f in self.fragments]


@dataclass(frozen=True)
class ActionRecord:
    instance_id: str
    decision: int | None
    reason: str = ""
    # (subordinate id, decision, weight at decision time) for aggregating agents.
    votes: tuple[tuple[str, int, float], ...] | None = None
    seq: int = 0
    trace_id: str = ""
    rule: str = "judge"
    direct: int | None = None
    tie: bool = False
    failed: bool = False


@dataclass
class ActionMemory:
    records: list[ActionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last_seq(self) -> int:
        return self.records[-1].seq if self.records else 0

    def summary(self, limit: int = 3) -> str:
        recent = [r for r in self.records[-limit:] if r.decision is not None]
        if not recent:
            return "no prior decisions"
        return "; ".join(f"{r.instance_id}->{r.decision}" for r in recent)


@dataclass
class ConfidenceMemory:
    weights: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.weights[key]

    def __setitem__(self, key: str, value: float) -> None:
        value = float(value)
        if not math.isfinite(value) or value < 0.0 or value > 2.0 + 1e-9:
            raise ValueError(f"confidence weight out of range: {value}")
        self.weights[key] = min(value, 2.0)

    def __contains__(self, key: str) -> bool:
        return key in self.weights

    def pop(self, key: str) -> float:
        return self.weights.pop(key)

    def keys(self) -> set[str]:
        return set(self.weights)


@dataclass(frozen=True)
class Hyperparameters:
    lam: float = 0.5
    gamma: float = 0.5
    alpha: float = 0.3
    top_k: int = 5
    n_max: int = 4
    layer_spec: tuple[int, ...] = (6, 5, 4)
    rho: float = 0.5
    seed: int = 0
    batch_size: int = 32
    experience_capacity: int = 256
    # Predefined group size used when filling Coordinator groups; None means
    # ceil(children / coordinators) capped at n_max.
    group_size: int | None = None
    weighted_routing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_spec", tuple(int(x) for x in self.layer_spec))
        problems = []
        if not self.lam >= 0:
            problems.append("lambda must be >= 0")
        if not self.gamma >= 0:
            problems.append("gamma must be >= 0")
        if not 0 < self.alpha < 1:
            problems.append("alpha must lie in (0, 1)")
        if self.top_k < 1:
            problems.append("top_k must be >= 1")
        if self.n_max < 2:
            problems.append("n_max must be >= 2")
        if not self.layer_spec or any(c <= 0 for c in self.layer_spec):
            problems.append("layer_spec must be nonempty with positive entries")
        if not 0 < self.rho <= 1:
            problems.append("rho must lie in (0, 1]")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.experience_capacity < 1:
            problems.append("experience_capacity must be >= 1")
        if self.group_size is not None and not 1 <= self.group_size <= self.n_max:
            problems.append("group_size must lie in [1, n_max]")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class AgentNode:
    id: str
    role: Role
    profile: Profile
    actions: ActionMemory = field(default_factory=ActionMemory)
    experience: ExperienceMemory | None = None
    confidence: ConfidenceMemory | None = None
    backend: str | None = None
    # DM fragment ids this auditor has already distilled.
    distilled: list[str] = field(default_factory=list)

    def __post_init__(self):
        has_exp = self.experience is not None
        has_conf = self.confidence is not None
        expected = {
            Role.AUDITOR: (True, False, True),
            Role.COORDINATOR: (False, True, False),
            Role.DECISION_MAKER: (True, True, True),
        }[self.role]
        if (has_exp, has_conf, self.backend is not None) != expected:
            raise ConfigError(
                f"{self.role.value} {self.id!r} needs experience={expected[0]}, "
                f"confidence={expected[1]}, backend binding={expected[2]}"
            )
        if self.role is Role.COORDINATOR and self.profile.features:
            raise ConfigError("coordinators never observe raw features")

    @classmethod
    def auditor(cls, id: str, profile: Profile, backend: str = "default", capacity: int = 256):
        return cls(id, Role.AUDITOR, profile, experience=ExperienceMemory(id, capacity), backend=backend)

    @classmethod
    def coordinator(cls, id: str):
        return cls(id, Role.COORDINATOR, Profile("team coordinator"), confidence=ConfidenceMemory())

    @classmethod
    def decision_maker(cls, id: str, profile: Profile, backend: str = "default", capacity: int = 256):
        return cls(
            id,
            Role.DECISION_MAKER,
            profile,
            experience=ExperienceMemory(id, capacity),
            confidence=ConfidenceMemory(),
            backend=backend,
        )


def project_features(instance: Instance, profile: Profile) -> dict[str, FeatureValue]:
    """Restrict an instance to the features a profile may observe."""
    view = {}
    for name in profile.features:
        if name not in instance.features:
            raise MissingFeatureError(name)
        view[name] = instance.features[name]
    return view


def record_action(agent: AgentNode, record: ActionRecord) -> ActionMemory:
    if not str(record.instance_id):
        raise ValueError("action record needs an instance id")
    agent.actions.records.append(replace(record, seq=agent.actions.last_seq + 1))
    return agent.actions


def validate_profile(profile: Profile, role: Role, feature_names: Sequence[str]) -> None:
    names = set(feature_names)
    chosen = list(profile.features)
    if len(set(chosen)) != len(chosen):
        raise ConfigError(f"duplicate features in profile: {chosen}")
    unknown = [f for f in chosen if f not in names]
    if unknown:
        raise ConfigError(f"profile references unknown features: {unknown}")
    if role is Role.AUDITOR and not (0 < len(chosen) < len(names)):
        raise ConfigError("auditor feature subset must be a nonempty proper subset")
    if role is Role.DECISION_MAKER and set(chosen) != names:
        raise ConfigError("decision maker must observe the full feature set")
    if role is Role.COORDINATOR and chosen:
        raise ConfigError("coordinators never observe raw features")


def render_view(view: Mapping[str, FeatureValue]) -> str:
    lines = []
    for name, value in view.items():
        if isinstance(value, float):
            lines.append(f"{name}: {value:.4g}")
        else:
            lines.append(f"{name}: {value}")
    return "\n".join(lines)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; two zero vectors count as identical, one zero as orthogonal."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = float(np.sqrt(u @ u))
    nv = float(np.sqrt(v @ v))
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def top_k_fragments(
    query: np.ndarray,
    fragments: Sequence[ExperienceFragment],
    k: int,
    exclude: set[str] | frozenset[str] = frozenset(),
) -> list[tuple[ExperienceFragment, float]]:
    """Highest-cosine fragments; ties keep insertion order."""
    scored = [(f, cosine(query, f.embedding)) for f in fragments if f.id not in exclude]
    scored.sort(key=lambda pair: -pair[1])
    return scored[:k]
