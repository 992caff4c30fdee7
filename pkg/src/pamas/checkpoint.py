"""Versioned, digest-checked JSON checkpoints of the full engine state.

All randomness in training is derived from (seed, epoch) and (seed, layer)
keys and the simulated backend hashes its inputs, so no generator state needs
to be stored beyond the seed inside the hyperparameters.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

from .backends import Backend, UsageMeter
from .engine import Engine, RunReport
from .model import (
    ActionMemory,
    ActionRecord,
    AgentNode,
    ConfidenceMemory,
    ExperienceFragment,
    ExperienceMemory,
    Hyperparameters,
    Origin,
    PamasError,
    Profile,
    Role,
)
from .topology import Hierarchy

FORMAT_VERSION = 1


class CheckpointError(PamasError):
    pass


def _canonical(payload: Any) -> str:
    return json.dumps(payload, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


def _node_state(node: AgentNode) -> dict:
    state: dict[str, Any] = {
        "id": node.id,
        "role": node.role.value,
        "profile": {"persona": node.profile.persona, "features": list(node.profile.features)},
        "backend": node.backend,
        "distilled": list(node.distilled),
        "actions": [
            {**dataclasses.asdict(r), "votes": None if r.votes is None else [list(v) for v in r.votes]}
            for r in node.actions.records
        ],
    }
    if node.experience is not None:
        state["experience"] = {
            "capacity": node.experience.capacity,
            "appended": node.experience.appended,
            "fragments": [
                {"id": f.id, "text": f.text, "origin": f.origin.value, "embedding": [float(x) for x in f.embedding]}
                for f in node.experience.fragments
            ],
        }
    if node.confidence is not None:
        state["confidence"] = [[k, v] for k, v in node.confidence.weights.items()]
    return state


def _restore_node(state: Mapping) -> AgentNode:
    experience = confidence = None
    if "experience" in state:
        exp = state["experience"]
        experience = ExperienceMemory(
            state["id"],
            exp["capacity"],
            [ExperienceFragment(f["id"], f["text"], f["embedding"], Origin(f["origin"])) for f in exp["fragments"]],
            exp["appended"],
        )
    if "confidence" in state:
        confidence = ConfidenceMemory()
        for k, v in state["confidence"]:
            confidence[k] = v
    records = [
        ActionRecord(**{**r, "votes": None if r["votes"] is None else tuple(tuple(v) for v in r["votes"])})
        for r in state["actions"]
    ]
    profile = Profile(state["profile"]["persona"], tuple(state["profile"]["features"]))
    return AgentNode(
        state["id"],
        Role(state["role"]),
        profile,
        ActionMemory(records),
        experience,
        confidence,
        state["backend"],
        list(state["distilled"]),
    )


def engine_state(engine: Engine, config: Mapping | None = None) -> dict:
    h = engine.hierarchy
    hyper = dataclasses.asdict(engine.hyper)
    hyper["layer_spec"] = list(hyper["layer_spec"])
    return {
        "hyper": hyper,
        "config": None if config is None else dict(config),
        "feature_names": list(engine.feature_names),
        "nodes": [_node_state(h.nodes[k]) for k in h.nodes],
        "hierarchy": {
            "dm_id": h.dm_id,
            "level": [[k, v] for k, v in h.level.items()],
            "edges": [[k, list(v)] for k, v in h.edges.items()],
            "anchors": [[k, v] for k, v in h.anchors.items()],
            "val_accuracy": [[k, v] for k, v in h.val_accuracy.items()],
        },
        "epochs_done": engine.epochs_done,
        "trace_counter": engine.trace_counter,
        "workers": engine.workers,
        "history": engine.history,
        "report": engine.report.to_dict(),
        "val_cache": [[a, i, v, d] for (a, i, v), d in engine.val_cache.items()],
    }


def restore_engine(state: Mapping, backends: Mapping[str, Backend], meter: UsageMeter) -> Engine:
    hs = state["hierarchy"]
    nodes = {}
    for ns in state["nodes"]:
        node = _restore_node(ns)
        nodes[node.id] = node
    h = Hierarchy(
        nodes,
        hs["dm_id"],
        {k: v for k, v in hs["level"]},
        {k: list(v) for k, v in hs["edges"]},
        {k: v for k, v in hs["anchors"]},
        {k: v for k, v in hs["val_accuracy"]},
    )
    hyper = Hyperparameters(**state["hyper"])
    return Engine(
        h,
        hyper,
        dict(backends),
        meter,
        tuple(state["feature_names"]),
        RunReport.from_dict(state["report"]),
        state["epochs_done"],
        list(state["history"]),
        state["trace_counter"],
        state["workers"],
        {(a, i, v): d for a, i, v, d in state["val_cache"]},
    )


def dumps_checkpoint(engine: Engine, config: Mapping | None = None) -> str:
    payload = engine_state(engine, config)
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    return json.dumps(
        {"format_version": FORMAT_VERSION, "digest": digest, "payload": payload},
        ensure_ascii=False,
        allow_nan=False,
        indent=1,
    ) + "\n"


def save_checkpoint(engine: Engine, path: str | Path, config: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_checkpoint(engine, config), encoding="utf-8")
    tmp.replace(path)
    return path


def read_checkpoint(path: str | Path) -> dict:
    """Parsed and verified payload; raises CheckpointError on any mismatch."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt: {exc}") from exc
    if not isinstance(doc, dict) or "payload" not in doc:
        raise CheckpointError(f"checkpoint {path} is corrupt: missing payload")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})")
    digest = hashlib.sha256(_canonical(doc["payload"]).encode()).hexdigest()
    if digest != doc.get("digest"):
        raise CheckpointError(f"checkpoint {path} is corrupt: content digest mismatch")
    return doc["payload"]


def load_checkpoint(path: str | Path, backends: Mapping[str, Backend], meter: UsageMeter) -> Engine:
    return restore_engine(read_checkpoint(path), backends, meter)
