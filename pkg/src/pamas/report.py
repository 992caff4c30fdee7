"""Human-readable decision traces and JSON report writers."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .routing import ActivationTrace
from .topology import Hierarchy
from .training import ForwardTrace


def _votes_line(node_id: str, votes, decision: int, tie: bool, extra: str = "") -> str:
    cast = ", ".join(f"{sub}={d} (w={w:.3f})" for sub, d, w in votes)
    flag = " [tie resolved by top child]" if tie else ""
    return f"  {node_id} -> {decision}{flag}{extra}: {cast}"


def render_trace(trace: ForwardTrace | ActivationTrace, hierarchy: Hierarchy, truth: int | None = None) -> str:
    """Case-box style trace: final decision and reason, then votes level by level."""
    if trace.final is None:
        return f"{trace.instance_id}, Decision: unavailable\nReason: {getattr(trace, 'error', None) or 'failed'}\n"
    lines = []
    if truth is not None:
        lines.append(f"(Ground-truth: {truth}, Prediction: {trace.final.decision})")
    lines.append(f"{trace.instance_id}, Decision: {trace.final.decision}")
    lines.append(f"Reason: {trace.final.reason}")
    top = hierarchy.top_level
    dm_votes = [(s.sub_id, s.decision, s.weight) for s in trace.summaries]
    direct = "" if trace.final.direct is None else f", own vote {trace.final.direct}"
    lines.append(f"Level {top} (decision maker{direct}, score {trace.score:+.3f}):")
    lines.append(_votes_line(hierarchy.dm_id, dm_votes, trace.final.decision, False))
    if isinstance(trace, ActivationTrace):
        states = trace.states
        for lv in range(top - 1, 0, -1):
            ids = sorted(n for n in states if hierarchy.level[n] == lv)
            if not ids:
                continue
            lines.append(f"Level {lv} (coordinators, routed):")
            for n in ids:
                st = states[n]
                w = hierarchy.weights(n)
                votes = [(c, _decision(trace, c), w[c]) for c in st.active]
                extra = f", activated {st.activation_count}/{len(st.ordered)}"
                lines.append(_votes_line(n, votes, st.decision, st.tie, extra))
    else:
        for lv in range(top - 1, 0, -1):
            ids = sorted(n for n in trace.coordinators if hierarchy.level[n] == lv)
            if not ids:
                continue
            lines.append(f"Level {lv} (coordinators):")
            for n in ids:
                c = trace.coordinators[n]
                votes = [(v.sub_id, v.decision, v.weight) for v in c.votes]
                lines.append(_votes_line(n, votes, c.decision, c.tie))
    lines.append("Level 0 (auditors):")
    for a, j in sorted(trace.judgments.items()):
        lines.append(f"  {a} -> {j.decision}: {j.reason}")
    return "\n".join(lines) + "\n"


def _decision(trace: ActivationTrace, node_id: str) -> int:
    if node_id in trace.judgments:
        return trace.judgments[node_id].decision
    return trace.states[node_id].decision


def write_json(path: str | Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    return path


def write_jsonl(path: str | Path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, allow_nan=False) + "\n")
    return path
