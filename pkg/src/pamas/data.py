"""CSV ingestion with seeded splits, and a synthetic feature-table generator."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import DataError, Instance

logger = logging.getLogger(__name__)

REJECT_LIMIT = 0.05
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class Splits:
    train: list[Instance]
    validation: list[Instance]
    test: list[Instance]

    def get(self, name: str) -> list[Instance]:
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def all(self) -> list[Instance]:
        return self.train + self.validation + self.test


@dataclass
class Reject:
    row: int  # 1-based data row number (header excluded)
    reason: str


@dataclass
class Dataset:
    feature_names: tuple[str, ...]
    instances: list[Instance]
    rejects: list[Reject] = field(default_factory=list)


def _parse_value(cell: str) -> float | str:
    try:
        value = float(cell)
    except ValueError:
        return cell
    return value if math.isfinite(value) else cell


def read_table(path: str | Path, *, require_label: bool = True) -> Dataset:
    """Read a header-first CSV with an ``id`` column and optional ``label``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if "id" not in header:
        raise DataError(f"{path} has no 'id' column")
    if require_label and "label" not in header:
        raise DataError(f"{path} has no 'label' column")
    if len(set(header)) != len(header):
        raise DataError(f"{path} has duplicate column names")
    features = tuple(h for h in header if h not in ("id", "label"))
    if not features:
        raise DataError(f"{path} has no feature columns")
    instances, rejects, seen = [], [], set()
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    for number, row in enumerate(body, start=1):
        if len(row) != len(header):
            rejects.append(Reject(number, f"expected {len(header)} fields, found {len(row)}"))
            continue
        record = dict(zip(header, (c.strip() for c in row)))
        missing = [f for f in features if record[f] == ""]
        if missing:
            rejects.append(Reject(number, f"missing feature(s) {', '.join(missing)}"))
            continue
        if not record["id"] or record["id"] in seen:
            rejects.append(Reject(number, f"empty or duplicate id {record['id']!r}"))
            continue
        label = None
        if "label" in record and record["label"] != "":
            if record["label"] not in ("0", "1"):
                rejects.append(Reject(number, f"label must be 0 or 1, got {record['label']!r}"))
                continue
            label = int(record["label"])
        elif require_label:
            rejects.append(Reject(number, "missing label"))
            continue
        seen.add(record["id"])
        instances.append(Instance(record["id"], {f: _parse_value(record[f]) for f in features}, label))
    if body and len(rejects) > REJECT_LIMIT * len(body):
        raise DataError(
            f"{len(rejects)} of {len(body)} rows rejected (limit {REJECT_LIMIT:.0%}); first: "
            f"row {rejects[0].row}: {rejects[0].reason}"
        )
    for r in rejects:
        logger.warning("%s row %d rejected: %s", path, r.row, r.reason)
    return Dataset(features, instances, rejects)


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("split ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    exact = [Fraction(repr(float(r))) for r in ratios]
    n_train = math.floor(n * exact[0])
    n_val = math.floor(n * exact[1])
    return n_train, n_val, n - n_train - n_val


def split_instances(instances: Sequence[Instance], ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Splits:
    """Seeded shuffle followed by a train/validation/test cut."""
    n_train, n_val, _ = split_counts(len(instances), ratios)
    order = np.random.default_rng([seed, 104729]).permutation(len(instances))
    shuffled = [instances[i] for i in order]
    return Splits(shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :])


def ingest_dataset(
    path: str | Path, *, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0, require_label: bool = True
) -> tuple[Dataset, Splits]:
    dataset = read_table(path, require_label=require_label)
    return dataset, split_instances(dataset.instances, ratios, seed)


def generate_synthetic(
    path: str | Path | None = None,
    *,
    n: int = 400,
    n_features: int = 20,
    balance: float = 0.5,
    separability: float | Sequence[float] = 1.0,
    noise: float = 1.0,
    seed: int = 0,
) -> str:
    """Write (and return) a labeled CSV whose feature k has mean ±separability[k]/2.

    Labels are exactly round(n * balance) positives in seeded order, and each
    feature is label-shifted Gaussian noise, so any feature subset carries a
    tunable amount of signal. Floats are written in shortest round-trip form.
    """
    if n <= 0 or n_features <= 0:
        raise ValueError("n and n_features must be positive")
    if not 0.0 <= balance <= 1.0:
        raise ValueError("balance must lie in [0, 1]")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    sep = np.full(n_features, float(separability)) if np.isscalar(separability) else np.asarray(separability, float)
    if sep.shape != (n_features,):
        raise ValueError("separability needs one value per feature")
    rng = np.random.default_rng([seed, 31337])
    positives = round(n * balance)
    labels = np.array([1] * positives + [0] * (n - positives))[rng.permutation(n)]
    signs = 2.0 * labels - 1.0
    values = signs[:, None] * sep[None, :] / 2.0 + noise * rng.standard_normal((n, n_features))
    width = len(str(n - 1))
    names = [f"f{k:02d}" for k in range(n_features)]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", *names, "label"])
    for i in range(n):
        writer.writerow([f"x{i:0{width}d}", *(repr(float(v)) for v in values[i]), int(labels[i])])
    text = out.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
