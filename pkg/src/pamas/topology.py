"""Hierarchy construction and adaptation.

The hierarchy is built bottom-up by clustering prediction vectors on the
validation set, then adapted during training by pruning redundant group
members and admitting complementary free agents.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import AgentNode, ConfigError, Hyperparameters, PamasError, Role, cosine

logger = logging.getLogger(__name__)


class HierarchyError(PamasError):
    pass


@dataclass
class ValidationSet:
    """Validation labels plus each agent's 0/1 prediction vector over them."""

    instance_ids: list[str]
    labels: np.ndarray
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if len(self.labels) != len(self.instance_ids):
            raise ValueError("labels and instance ids differ in length")


@dataclass(frozen=True)
class GroupEvalReport:
    group_id: str
    ensemble_accuracy: float
    vectors: dict[str, np.ndarray]
    shared_error_fraction: float


@dataclass(frozen=True)
class ChangeLogEntry:
    epoch: int
    group_id: str
    action: str  # prune | expand | skip
    member_id: str | None
    score: float | None
    reason: str
    batch: int = 0

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "batch": self.batch,
            "group_id": self.group_id,
            "action": self.action,
            "member_id": self.member_id,
            "score": self.score,
            "reason": self.reason,
        }


@dataclass
class Hierarchy:
    nodes: dict[str, AgentNode]
    dm_id: str
    level: dict[str, int]
    edges: dict[str, list[str]] = field(default_factory=dict)
    anchors: dict[str, str] = field(default_factory=dict)
    # Running validation accuracy per node (the historical-accuracy term).
    val_accuracy: dict[str, float] = field(default_factory=dict)

    @property
    def dm(self) -> AgentNode:
        return self.nodes[self.dm_id]

    @property
    def top_level(self) -> int:
        return self.level[self.dm_id]

    @property
    def built(self) -> bool:
        return bool(self.edges.get(self.dm_id))

    def children(self, node_id: str) -> list[str]:
        return list(self.edges.get(node_id, ()))

    def parents(self) -> dict[str, str]:
        out = {}
        for parent, kids in self.edges.items():
            for kid in kids:
                out[kid] = parent
        return out

    def attached(self) -> list[str]:
        """Nodes reachable from the decision maker, top-down breadth-first."""
        seen, frontier = [self.dm_id], [self.dm_id]
        while frontier:
            nxt = []
            for n in frontier:
                for c in self.edges.get(n, ()):
                    seen.append(c)
                    nxt.append(c)
            frontier = nxt
        return seen

    def layers(self) -> list[list[str]]:
        """Attached nodes grouped by level, level 0 first, ids sorted."""
        out: list[list[str]] = [[] for _ in range(self.top_level + 1)]
        for n in self.attached():
            out[self.level[n]].append(n)
        return [sorted(layer) for layer in out]

    def free(self, level: int) -> list[str]:
        """Nodes at ``level`` with no parent (pruned or never placed)."""
        parents = self.parents()
        return sorted(n for n, lv in self.level.items() if lv == level and n not in parents and n != self.dm_id)

    def active_auditors(self) -> list[str]:
        return self.layers()[0]

    def active_coordinators(self) -> list[str]:
        return [n for layer in self.layers()[1:-1] for n in layer]

    def attach(self, parent: str, child: str, weight: float = 1.0) -> None:
        if self.level[child] != self.level[parent] - 1:
            raise HierarchyError(f"{child} is not one level below {parent}")
        if child in self.parents():
            raise HierarchyError(f"{child} already has a parent")
        self.edges.setdefault(parent, []).append(child)
        self.nodes[parent].confidence[child] = weight

    def detach(self, parent: str, child: str) -> None:
        self.edges[parent].remove(child)
        self.nodes[parent].confidence.pop(child)

    def weights(self, parent: str) -> dict[str, float]:
        return dict(self.nodes[parent].confidence.weights)


# -- ensemble arithmetic over prediction vectors ---------------------------


def ensemble_predict(members: Sequence[str], vectors: Mapping[str, np.ndarray], weights: Mapping[str, float]) -> np.ndarray:
    """Weighted-vote output per validation instance; a zero sum resolves to 0.

    Accumulates member by member so the per-instance sums match a scalar
    left-to-right weighted vote bit for bit.
    """
    if not members:
        raise ValueError("empty group")
    total = np.zeros(len(vectors[members[0]]))
    for m in members:
        total = total + weights[m] * (2.0 * vectors[m] - 1.0)
    return (total > 0).astype(np.int8)


def ensemble_accuracy(members, vectors, weights, labels) -> float:
    pred = ensemble_predict(members, vectors, weights)
    return float(np.count_nonzero(pred == labels)) / len(labels)


def evaluate_group(group_id: str, members, vectors, weights, labels) -> GroupEvalReport:
    labels = np.asarray(labels)
    pred = ensemble_predict(members, vectors, weights)
    wrong = pred != labels
    all_wrong = np.ones(len(labels), dtype=bool)
    for m in members:
        all_wrong &= vectors[m] != labels
    n_wrong = int(np.count_nonzero(wrong))
    shared = int(np.count_nonzero(all_wrong & wrong)) / n_wrong if n_wrong else 0.0
    return GroupEvalReport(
        group_id,
        float(np.count_nonzero(~wrong)) / len(labels),
        {m: vectors[m] for m in members},
        shared,
    )


def prune_score(member: str, members: Sequence[str], vectors, weights, labels, lam: float) -> float:
    """Marginal accuracy of ``member`` minus ``lam`` times its mean cosine to peers."""
    if len(members) < 2:
        raise ValueError("prune score needs a group of at least two")
    rest = [m for m in members if m != member]
    marginal = ensemble_accuracy(members, vectors, weights, labels) - ensemble_accuracy(rest, vectors, weights, labels)
    redundancy = sum(cosine(vectors[member], vectors[j]) for j in rest) / len(rest)
    return marginal - lam * redundancy


def expansion_gain(candidate: str, members: Sequence[str], vectors, weights, labels, gamma: float) -> float:
    """Accuracy gained by admitting ``candidate`` at weight 1, minus a similarity penalty."""
    if candidate in members:
        raise ValueError(f"{candidate} is already a member")
    trial_weights = dict(weights)
    trial_weights[candidate] = 1.0
    gained = ensemble_accuracy([*members, candidate], vectors, trial_weights, labels) - ensemble_accuracy(
        members, vectors, weights, labels
    )
    penalty = sum(cosine(vectors[candidate], vectors[j]) for j in members) / len(members)
    return gained - gamma * penalty


def f1_score(pred: np.ndarray, labels: np.ndarray) -> float:
    tp = int(np.count_nonzero((pred == 1) & (labels == 1)))
    fp = int(np.count_nonzero((pred == 1) & (labels == 0)))
    fn = int(np.count_nonzero((pred == 0) & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


# -- construction ----------------------------------------------------------


def cluster_auditors(vectors: Mapping[str, np.ndarray], target: int) -> list[list[str]]:
    """Average-linkage agglomerative clustering under cosine distance.

    Merges until ``target`` clusters remain. Ties in merge distance go to the
    smallest pair of cluster indices, so the result depends only on input order.
    """
    ids = list(vectors)
    if not ids:
        raise ValueError("need at least one prediction vector")
    if not 1 <= target <= len(ids):
        raise ValueError(f"target cluster count {target} outside [1, {len(ids)}]")
    if any(len(vectors[i]) == 0 for i in ids):
        raise ValueError("prediction vectors are empty (no validation instances)")
    n = len(ids)
    dist = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            dist[a, b] = 1.0 - cosine(vectors[ids[a]], vectors[ids[b]])
    clusters: list[list[int]] = [[i] for i in range(n)]
    while len(clusters) > target:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = float(dist[np.ix_(clusters[i], clusters[j])].mean())
                if best is None or d < best[0]:
                    best = (d, i, j)
        _, i, j = best
        clusters[i] = sorted(clusters[i] + clusters[j])
        del clusters[j]
    return [[ids[k] for k in c] for c in clusters]


def select_anchor(cluster: Sequence[str], f1: Mapping[str, float]) -> str:
    if not cluster:
        raise ValueError("empty cluster")
    return min(cluster, key=lambda i: (-f1[i], i))


def check_layer_spec(n_auditors: int, hyper: Hyperparameters) -> None:
    below = n_auditors
    for level, count in enumerate(hyper.layer_spec, start=1):
        if count > below:
            raise ConfigError(f"layer {level} wants {count} coordinators over only {below} children")
        if count * hyper.n_max < below:
            raise ConfigError(f"layer {level}: {count} coordinators of size <= {hyper.n_max} cannot hold {below} children")
        below = count


def _form_groups(clusters, vectors, f1, size: int, n_max: int, rng: np.random.Generator) -> list[list[str]]:
    centroids = [np.mean([vectors[m] for m in c], axis=0) for c in clusters]
    k = len(clusters)
    cdist = np.array([[1.0 - cosine(centroids[a], centroids[b]) for b in range(k)] for a in range(k)])

    def nearest(a: int) -> list[int]:
        return sorted(range(k), key=lambda b: (b != a, cdist[a, b], b))

    groups, leftover = [], []
    for c in clusters:
        anchor = select_anchor(c, f1)
        rest = [m for m in c if m != anchor]
        rest = [rest[i] for i in rng.permutation(len(rest))]
        groups.append([anchor] + rest[: size - 1])
        leftover.append(rest[size - 1 :])
    # Shortfall: draw from the nearest clusters' unplaced members.
    for a in range(k):
        for b in nearest(a)[1:]:
            while len(groups[a]) < size and leftover[b]:
                groups[a].append(leftover[b].pop(0))
    # Anything still unplaced joins the nearest group with spare room.
    for b in range(k):
        while leftover[b]:
            m = leftover[b].pop(0)
            target = next((a for a in nearest(b) if len(groups[a]) < n_max), None)
            if target is None:
                raise HierarchyError("no group has room left")
            groups[target].append(m)
    return groups


def build_hierarchy(
    auditors: Sequence[AgentNode],
    dm: AgentNode,
    validation: ValidationSet,
    hyper: Hyperparameters,
) -> Hierarchy:
    check_layer_spec(len(auditors), hyper)
    labels = validation.labels
    if len(labels) == 0:
        raise ValueError("validation set is empty")
    depth = len(hyper.layer_spec)
    nodes = {a.id: a for a in auditors}
    nodes[dm.id] = dm
    level = {a.id: 0 for a in auditors}
    level[dm.id] = depth + 1
    h = Hierarchy(nodes, dm.id, level)
    vectors = {a.id: validation.vectors[a.id] for a in auditors}
    current = [a.id for a in auditors]
    for lv, count in enumerate(hyper.layer_spec, start=1):
        clusters = cluster_auditors({i: vectors[i] for i in current}, count)
        f1 = {i: f1_score(vectors[i], labels) for i in current}
        size = hyper.group_size or min(hyper.n_max, math.ceil(len(current) / count))
        rng = np.random.default_rng([hyper.seed, lv])
        groups = _form_groups(clusters, vectors, f1, size, hyper.n_max, rng)
        next_ids = []
        for g, members in enumerate(groups):
            coord = AgentNode.coordinator(f"C{lv}_{g:02d}")
            h.nodes[coord.id] = coord
            h.level[coord.id] = lv
            for m in members:
                h.attach(coord.id, m, 1.0)
            h.anchors[coord.id] = members[0]
            vectors[coord.id] = ensemble_predict(members, vectors, h.weights(coord.id))
            next_ids.append(coord.id)
        current = next_ids
    for c in current:
        h.attach(dm.id, c, 1.0)
    refresh_accuracy(h, vectors, labels)
    return h


# -- adaptation ------------------------------------------------------------


def node_vectors(h: Hierarchy, validation: ValidationSet) -> dict[str, np.ndarray]:
    """Auditor vectors from ``validation`` plus every Coordinator's ensemble output."""
    vectors = {n: v for n, v in validation.vectors.items() if n in h.level and h.level[n] == 0}
    coords = sorted((lv, n) for n, lv in h.level.items() if 0 < lv < h.top_level)
    for _, c in coords:
        kids = h.children(c)
        if kids:
            vectors[c] = ensemble_predict(kids, vectors, h.weights(c))
    return vectors


def refresh_accuracy(h: Hierarchy, vectors: Mapping[str, np.ndarray], labels: np.ndarray) -> None:
    for n, v in vectors.items():
        h.val_accuracy[n] = float(np.count_nonzero(v == labels)) / len(labels)


def adapt_topology(
    h: Hierarchy, validation: ValidationSet, hyper: Hyperparameters, epoch: int = 0, batch: int = 0
) -> list[ChangeLogEntry]:
    """Prune redundant Auditors and admit at most one complementary free Auditor per group.

    Only groups of Auditors adapt; Coordinators themselves are never pruned.
    """
    labels = validation.labels
    vectors = node_vectors(h, validation)
    log: list[ChangeLogEntry] = []

    def note(group, action, member, score, reason):
        log.append(ChangeLogEntry(epoch, group, action, member, None if score is None else float(score), reason, batch))

    for cid in h.layers()[1]:
        members = h.children(cid)
        weights = h.weights(cid)
        anchor = h.anchors.get(cid)
        pruned = set()
        if len(members) >= 2:
            scores = {m: prune_score(m, members, vectors, weights, labels, hyper.lam) for m in members}
            for m in sorted((m for m in members if scores[m] < 0), key=lambda m: (scores[m], m)):
                if m == anchor:
                    note(cid, "skip", m, scores[m], "anchor is protected")
                elif len(h.children(cid)) <= 2:
                    note(cid, "skip", m, scores[m], "group floor of two members")
                else:
                    h.detach(cid, m)
                    pruned.add(m)
                    note(cid, "prune", m, scores[m], "negative prune score")
        members = h.children(cid)
        weights = h.weights(cid)
        report = evaluate_group(cid, members, vectors, weights, labels)
        if report.shared_error_fraction >= hyper.rho:
            candidates = [n for n in h.free(0) if n not in pruned and n in vectors]
            if len(members) >= hyper.n_max:
                note(cid, "skip", None, report.shared_error_fraction, "group is full")
            elif not candidates:
                note(cid, "skip", None, report.shared_error_fraction, "no free candidates")
            else:
                gains = {c: expansion_gain(c, members, vectors, weights, labels, hyper.gamma) for c in candidates}
                best = min(candidates, key=lambda c: (-gains[c], c))
                if gains[best] > 0:
                    h.attach(cid, best, 1.0)
                    note(cid, "expand", best, gains[best], "positive expansion gain")
                else:
                    note(cid, "skip", best, gains[best], "best expansion gain not positive")
    refresh_accuracy(h, node_vectors(h, validation), labels)
    return log


def audit_hierarchy(h: Hierarchy, n_max: int) -> list[str]:
    """Structural invariant violations; empty when the hierarchy is sound."""
    problems = []
    dms = [n for n, node in h.nodes.items() if node.role is Role.DECISION_MAKER]
    if dms != [h.dm_id]:
        problems.append(f"expected exactly one decision maker, found {dms}")
    seen: dict[str, int] = {}
    for parent, kids in h.edges.items():
        for k in kids:
            seen[k] = seen.get(k, 0) + 1
    for n, count in seen.items():
        if count > 1:
            problems.append(f"{n} has {count} parents")
    attached = h.attached()
    if len(attached) != len(set(attached)):
        problems.append("attached nodes do not form a tree")
    for n in attached:
        node = h.nodes[n]
        kids = h.children(n)
        if node.role is Role.COORDINATOR and not 1 <= len(kids) <= n_max:
            problems.append(f"{n} has {len(kids)} children (allowed 1..{n_max})")
        if node.role is Role.AUDITOR and kids:
            problems.append(f"auditor {n} has children")
        for k in kids:
            if h.level[k] != h.level[n] - 1:
                problems.append(f"{k} is not one level below its parent {n}")
        if node.confidence is not None and node.confidence.keys() != set(kids):
            problems.append(f"{n} confidence keys {sorted(node.confidence.keys())} != children {sorted(kids)}")
        if n != h.dm_id and n not in seen:
            problems.append(f"{n} is attached without a parent")
    for c, a in h.anchors.items():
        if c in attached and a not in h.children(c):
            problems.append(f"anchor {a} of {c} is no longer a member")
    return problems


def iter_groups(h: Hierarchy) -> Iterable[tuple[str, list[str]]]:
    for layer in h.layers()[1:]:
        for cid in layer:
            yield cid, h.children(cid)
