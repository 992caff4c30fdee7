"""Prompt rendering and reply parsing for the live backend.

Replies follow a ``User: <id>, Decision: <0|1>, Reason: <text>`` contract.
"""

from __future__ import annotations

import re
from typing import Mapping, Sequence

from ..model import render_view
from .base import ParseError, ReflectionContext, Summary

AUDITOR_SYSTEM = "You are a detection expert auditing one narrow slice of evidence."
DM_SYSTEM = "You are the final decision expert for misinformation detection."

_DECISION = re.compile(r"decision\s*[:=]\s*\**\s*([01])\b", re.IGNORECASE)
_REASON = re.compile(r"reason\s*[:=]\s*(.+)", re.IGNORECASE | re.DOTALL)
_NEW_EXPERIENCE = re.compile(r"new\s+experience\s*[:=]\s*(.+)", re.IGNORECASE | re.DOTALL)
_NEW_WEIGHTS = re.compile(r"new\s+weights\s*[:=]\s*(.+?)(?:new\s+experience|$)", re.IGNORECASE | re.DOTALL)


def _experience_block(experience: Sequence[str]) -> str:
    if not experience:
        return "(none yet)"
    return "\n".join(f"- {t}" for t in experience)


def auditor_prompt(instance_id: str, view: Mapping, experience: Sequence[str], history: str) -> str:
    return (
        f"Sub-features of user {instance_id}:\n{render_view(view)}\n\n"
        f"Your experience:\n{_experience_block(experience)}\n\n"
        f"Your recent decisions: {history}\n\n"
        "Decide whether the user is malicious (1) or normal (0). "
        "Answer exactly as: User: <id>, Decision: <0 or 1>, Reason: <one sentence>"
    )


def decision_maker_prompt(
    instance_id: str, view: Mapping, summaries: Sequence[Summary], experience: Sequence[str]
) -> str:
    if summaries:
        judged = "\n".join(
            f"- {s.sub_id} (confidence {s.weight:.2f}): decision {s.decision}, reason: {s.reason}" for s in summaries
        )
    else:
        judged = "(no coordinator judgments; judge directly)"
    return (
        f"Full features of user {instance_id}:\n{render_view(view)}\n\n"
        f"Coordinators' judgments:\n{judged}\n\n"
        f"Your experience:\n{_experience_block(experience)}\n\n"
        "Decide whether the user is malicious (1) or normal (0). "
        "Answer exactly as: User: <id>, Decision: <0 or 1>, Reason: <one or two sentences>"
    )


def reflection_prompt(context: ReflectionContext) -> str:
    if context.mode == "merge":
        return (
            f"Your current experience:\n{_experience_block(context.current)}\n\n"
            f"Experience studied from another agent:\n{_experience_block(context.fragments)}\n\n"
            "Integrate both into one concise sentence. Answer as: New Experience: <sentence>"
        )
    pred = context.predicted
    lines = [
        f"Features of user {context.instance_id}:\n{render_view(context.view or {})}",
        f"Your judgment was Decision: {pred.decision}, Reason: {pred.reason}",
        f"The ground truth is {context.truth}.",
    ]
    if context.children:
        lines.append(
            "Coordinators' judgments and current weights:\n"
            + "\n".join(f"- {c.sub_id}: decision {c.decision}, weight {c.weight:.2f}, reason: {c.reason}" for c in context.children)
        )
        lines.append(
            "For each coordinator give a reflection score in [0, 1] for how much it should be trusted, "
            "and summarize the lesson in one concise sentence. Answer as:\n"
            "New Weights: <id>=<score>, <id>=<score>, ...\nNew Experience: <sentence>"
        )
    else:
        lines.append("Contrast your judgment with the truth and summarize the lesson in one concise sentence. "
                     "Answer as: New Experience: <sentence>")
    return "\n\n".join(lines)


def parse_judgment(reply: str) -> tuple[int, str]:
    """Extract (decision, reason) from a reply; raise ParseError if no decision."""
    match = _DECISION.search(reply or "")
    if not match:
        raise ParseError("reply has no recognizable Decision field", raw=reply)
    decision = int(match.group(1))
    reasons = list(_REASON.finditer(reply))
    reason = reasons[-1].group(1).strip() if reasons else ""
    return decision, reason


def parse_experience(reply: str) -> str:
    match = _NEW_EXPERIENCE.search(reply or "")
    text = match.group(1) if match else (reply or "")
    text = " ".join(text.split())
    if not text:
        raise ParseError("reply has no experience sentence", raw=reply)
    return text


def parse_weights(reply: str, child_ids: Sequence[str]) -> dict[str, float]:
    """Per-child reflection scores; entries outside [0, 1] are dropped."""
    match = _NEW_WEIGHTS.search(reply or "")
    if not match:
        return {}
    found = {}
    for cid in child_ids:
        m = re.search(re.escape(cid) + r"\s*[:=]\s*([0-9]*\.?[0-9]+)", match.group(1))
        if m:
            value = float(m.group(1))
            if 0.0 <= value <= 1.0:
                found[cid] = value
    return found
