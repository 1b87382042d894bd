"""Top-K ranking metrics, standard and probe-item variants, plus bootstrap CIs.

The probe-item variants (``hr_star`` / ``ndcg_star``) measure how often and
how high one specific item shows up in recommendation lists, instead of
matching a per-unit ground truth. Every successive-evaluation step counts as
one unit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class EvalUnit:
    """One recommendation list to be scored (one user at one evaluation step)."""

    user_id: int
    step_index: int
    recs: np.ndarray = field(repr=False)
    ground_truth: Optional[int] = None

    def __post_init__(self):
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")
        recs = np.asarray(self.recs, dtype=np.int64)
        if len(np.unique(recs)) != len(recs):
            raise ValueError("recommendation list contains duplicates")
        object.__setattr__(self, "recs", recs)


@dataclass(frozen=True)
class MetricPoint:
    n: int
    metric: str
    k: int
    mean: float
    ci_low: float
    ci_high: float
    n_entities: int


def _require_units(units: Sequence[EvalUnit]):
    if not units:
        raise ValueError("need at least one evaluation unit")


def hr_star(item: int, units: Sequence[EvalUnit], k: int) -> float:
    """Fraction of units whose top-k list contains ``item``."""
    _require_units(units)
    hits = sum(1 for u in units if item in u.recs[:k])
    return hits / len(units)


def ndcg_star(item: int, units: Sequence[EvalUnit], k: int) -> float:
    """Mean positional gain of ``item``: 1/log2(rank+1) when in the top-k, else 0."""
    _require_units(units)
    total = 0.0
    for u in units:
        pos = np.flatnonzero(u.recs[:k] == item)
        if len(pos):
            total += 1.0 / math.log2(pos[0] + 2.0)
    return total / len(units)


def _require_ground_truth(units: Sequence[EvalUnit]):
    _require_units(units)
    for u in units:
        if u.ground_truth is None:
            raise ValueError(f"unit (user={u.user_id}, step={u.step_index}) has no ground truth")


def hr_at_k(units: Sequence[EvalUnit], k: int) -> float:
    """Standard single-target hit rate."""
    _require_ground_truth(units)
    hits = sum(1 for u in units if u.ground_truth in u.recs[:k])
    return hits / len(units)


def ndcg_at_k(units: Sequence[EvalUnit], k: int) -> float:
    """Standard single-target NDCG (ideal DCG is 1 for one relevant item)."""
    _require_ground_truth(units)
    total = 0.0
    for u in units:
        pos = np.flatnonzero(u.recs[:k] == u.ground_truth)
        if len(pos):
            total += 1.0 / math.log2(pos[0] + 2.0)
    return total / len(units)


def aggregate_item_metric(per_item: Mapping[int, float], eligible: Iterable[int]) -> float:
    """Plain mean of per-item values over the eligible item set."""
    eligible = list(eligible)
    if not eligible:
        raise ValueError("eligible item set is empty")
    missing = [i for i in eligible if i not in per_item]
    if missing:
        raise KeyError(f"eligible items without a value: {missing[:5]}")
    return float(np.mean([per_item[i] for i in eligible]))


def stability_at_k(lists_a: Mapping[int, Sequence[int]], lists_b: Mapping[int, Sequence[int]],
                   k: int) -> float:
    """Mean top-k overlap |A ∩ B| / k between two runs over the same users."""
    if set(lists_a) != set(lists_b):
        raise ValueError("stability requires identical user sets")
    if not lists_a:
        raise ValueError("stability requires at least one user")
    total = 0.0
    for user, a in lists_a.items():
        sa = set(np.asarray(a)[:k].tolist())
        sb = set(np.asarray(lists_b[user])[:k].tolist())
        total += len(sa & sb) / k
    return total / len(lists_a)


def confidence_interval(
    samples: Sequence[float], level: float = 0.95, n_boot: int = 1000, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean over entities.

    Degenerates to a point interval for a single sample. The sample mean is
    always inside the returned interval (clamped at the edges).
    """
    values = np.asarray(samples, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("need at least one sample")
    mean = float(values.mean())
    if len(values) < 2:
        return mean, mean
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(values), size=(n_boot, len(values)))
    boot_means = values[draws].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(boot_means, [alpha, 1.0 - alpha])
    return min(float(low), mean), max(float(high), mean)


def summarize(values: Sequence[float], n: int, metric: str, k: int,
              level: float = 0.95, n_boot: int = 1000, seed: int = 0) -> MetricPoint:
    """Aggregate per-entity values at one N into a MetricPoint with its CI."""
    values = np.asarray(values, dtype=np.float64)
    low, high = confidence_interval(values, level=level, n_boot=n_boot, seed=seed)
    return MetricPoint(
        n=int(n), metric=metric, k=int(k), mean=float(values.mean()),
        ci_low=low, ci_high=high, n_entities=len(values),
    )


# -- curves file -------------------------------------------------------------

CURVE_COLUMNS = ("setup", "model", "metric", "K", "N", "mean", "ci_low", "ci_high", "n_entities")


@dataclass(frozen=True)
class CurveRow:
    setup: str
    model: str
    metric: str
    k: int
    n: int
    mean: float
    ci_low: float
    ci_high: float
    n_entities: int


def points_to_rows(points: Iterable[MetricPoint], setup: str, model: str) -> list[CurveRow]:
    return [
        CurveRow(setup=setup, model=model, metric=p.metric, k=p.k, n=p.n, mean=p.mean,
                 ci_low=p.ci_low, ci_high=p.ci_high, n_entities=p.n_entities)
        for p in points
    ]


def write_curves(rows: Iterable[CurveRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.setup, r.model, r.metric, r.k, r.n,
                 repr(r.mean), repr(r.ci_low), repr(r.ci_high), r.n_entities]
            )


def read_curves(path) -> list[CurveRow]:
    """Read a curves CSV; also accepts the plot-data layout (``value`` column)."""
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty curves file")
        value_col = "mean" if "mean" in reader.fieldnames else "value"
        for rec in reader:
            rows.append(
                CurveRow(
                    setup=rec["setup"], model=rec["model"], metric=rec["metric"],
                    k=int(rec["K"]), n=int(rec["N"]), mean=float(rec[value_col]),
                    ci_low=float(rec["ci_low"]), ci_high=float(rec["ci_high"]),
                    n_entities=int(rec["n_entities"]),
                )
            )
    return rows
