from __future__ import annotations

import numpy as np

from pamas.backends import SimulatedAgentSpec, SimulatedBackend, UsageMeter
from pamas.data import Splits, split_instances
from pamas.engine import assign_profiles, make_engine
from pamas.model import Hyperparameters, Instance


def make_instances(n: int, n_features: int = 8, seed: int = 0, balance: float = 0.5, prefix: str = "i") -> list[Instance]:
    rng = np.random.default_rng(seed)
    names = [f"f{k:02d}" for k in range(n_features)]
    positives = round(n * balance)
    labels = np.array([1] * positives + [0] * (n - positives))[rng.permutation(n)]
    out = []
    for i in range(n):
        values = rng.normal(size=n_features) + (labels[i] - 0.5)
        out.append(Instance(f"{prefix}{i:04d}", dict(zip(names, map(float, values))), int(labels[i])))
    return out


def sim_engine(
    instances,
    *,
    n_auditors: int = 8,
    subset: int = 3,
    hyper: Hyperparameters | None = None,
    accuracy: float = 0.7,
    specs: dict | None = None,
    seed: int = 0,
    tokens: int = 100,
):
    """Engine over simulated agents; returns (engine, backend, meter)."""
    hyper = hyper or Hyperparameters(layer_spec=(2,), n_max=max(4, -(-n_auditors // 2)), seed=seed, batch_size=16)
    names = tuple(instances[0].features)
    meter = UsageMeter()
    backend = SimulatedBackend(
        meter, seed=seed, tokens_per_call=tokens, default_spec=SimulatedAgentSpec(accuracy), specs=specs or {}
    )
    backend.register(instances)
    engine = make_engine(names, assign_profiles(names, n_auditors, subset, seed), hyper, {"default": backend}, meter)
    return engine, backend, meter


def sim_splits(n: int = 100, seed: int = 0, n_features: int = 8) -> Splits:
    return split_instances(make_instances(n, n_features, seed), seed=seed)


def brute_vote(votes) -> tuple[int, float]:
    """Independent weighted-vote evaluation: compare the two class masses."""
    yes = sum(w for _, d, w in votes if d == 1)
    no = sum(w for _, d, w in votes if d == 0)
    return (1 if yes > no else 0), yes - no


def brute_ensemble_accuracy(members, vectors, weights, labels) -> float:
    """Instance-by-instance weighted vote, independent of the vectorized path."""
    correct = 0
    for t in range(len(labels)):
        yes = sum(weights[m] for m in members if vectors[m][t] == 1)
        no = sum(weights[m] for m in members if vectors[m][t] == 0)
        correct += int((1 if yes > no else 0) == labels[t])
    return correct / len(labels)


def brute_cosine(u, v) -> float:
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    nu = sum(float(a) ** 2 for a in u) ** 0.5
    nv = sum(float(b) ** 2 for b in v) ** 0.5
    if nu == 0 and nv == 0:
        return 1.0
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


def wire(engine, groups: dict[str, dict[str, float]], top: dict[str, float] | None = None) -> None:
    """Hand-build a one-Coordinator-layer hierarchy: {coordinator: {auditor: weight}}."""
    from pamas.model import AgentNode

    h = engine.hierarchy
    for cid, members in groups.items():
        h.nodes[cid] = AgentNode.coordinator(cid)
        h.level[cid] = 1
        for a, w in members.items():
            h.attach(cid, a, w)
        h.anchors[cid] = next(iter(members))
    for cid in groups:
        h.attach(h.dm_id, cid, (top or {}).get(cid, 1.0))
