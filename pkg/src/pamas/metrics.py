"""Classification metrics over hard decisions plus a ranking score."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def score_from_sum(signed: float) -> float:
    """Squash a signed vote sum into [0, 1] for ranking: (s / (1 + |s|) + 1) / 2."""
    return (signed / (1.0 + abs(signed)) + 1.0) / 2.0


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Rank-statistic AUC with midranks for ties; None for a single-class set."""
    labels = np.asarray(labels)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(scores, dtype=float), method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_metrics(predictions: Sequence[tuple[float, int, int]]) -> MetricsReport:
    """Metrics from (score, decision, label) triples.

    Precision, recall and F1 fall back to 0 when their denominators vanish.
    """
    if not predictions:
        raise ValueError("no predictions to score")
    tp = fp = tn = fn = 0
    for _, d, y in predictions:
        if y not in (0, 1) or d not in (0, 1):
            raise ValueError(f"decision and label must be binary, got {(d, y)}")
        if d == 1 and y == 1:
            tp += 1
        elif d == 1:
            fp += 1
        elif y == 1:
            fn += 1
        else:
            tn += 1
    n = len(predictions)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = roc_auc([p[0] for p in predictions], [p[2] for p in predictions])
    return MetricsReport((tp + tn) / n, precision, recall, f1, auc, tp, fp, tn, fn, n)
