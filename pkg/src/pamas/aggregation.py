"""Decision-combination arithmetic: weighted votes, majority margins and
reason inheritance for Coordinators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class NoAlignedVoteError(ValueError):
    """No subordinate voted for the aggregated decision."""


@dataclass(frozen=True)
class Vote:
    sub_id: str
    decision: int
    weight: float
    reason: str = ""


def check_votes(votes: Sequence[Vote]) -> None:
    if not votes:
        raise ValueError("vote set must be nonempty")
    ids = [v.sub_id for v in votes]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate subordinate ids in vote set: {ids}")
    for v in votes:
        if v.decision not in (0, 1):
            raise ValueError(f"vote decision must be 0 or 1, got {v.decision!r}")


def signed_sum(votes: Sequence[Vote]) -> float:
    total = 0.0
    for v in votes:
        total += v.weight * (2 * v.decision - 1)
    return total


def weighted_vote(votes: Sequence[Vote]) -> tuple[int, float]:
    """Return (decision, signed sum); an exact zero sum resolves to 0."""
    check_votes(votes)
    s = signed_sum(votes)
    return int(s > 0), s


def majority_margin(decisions: Sequence[int]) -> int:
    if not decisions:
        raise ValueError("margin needs at least one decision")
    return sum(2 * d - 1 for d in decisions)


def inherit_reason(votes: Sequence[Vote], decision: int) -> str:
    """Reason of the highest-weight vote agreeing with ``decision``.

    Ties on weight go to the lexicographically smallest subordinate id.
    """
    check_votes(votes)
    aligned = [v for v in votes if v.decision == decision]
    if not aligned:
        raise NoAlignedVoteError(f"no subordinate voted {decision}")
    best = min(aligned, key=lambda v: (-v.weight, v.sub_id))
    return best.reason
