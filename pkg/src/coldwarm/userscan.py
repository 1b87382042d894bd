"""User-based threshold scan: one frozen model, truncated input histories.

For each N, every test user with at least N input events gets a history of
N events sampled uniformly without replacement (then re-sorted by time), and
the model's top-K list is scored against the user's single post-GT ground
truth. No retraining happens anywhere in this module.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import ranking
from .errors import ScanAbortError
from .metrics import MetricPoint, summarize
from .models import Recommender
from .seeding import derive_seed
from .splitting import UserScanSplit

log = logging.getLogger(__name__)

DEFAULT_N_GRID = (1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 30, 50)
DEFAULT_K_LIST = (10,)

_SCORE_CHUNK = 512


@dataclass(frozen=True)
class UserScanConfig:
    n_grid: tuple = DEFAULT_N_GRID
    k_list: tuple = DEFAULT_K_LIST
    base_seed: int = 0
    filter_seen: bool = True
    n_boot: int = 1000

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or grid[0] < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("n_grid must be strictly ascending with min >= 1")
        klist = tuple(int(k) for k in self.k_list)
        if not klist or min(klist) < 1:
            raise ValueError("k_list entries must be >= 1")
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "k_list", klist)


@dataclass(frozen=True)
class UserRecord:
    """One (user, N, K) measurement."""

    user: int
    n: int
    k: int
    hr: float
    ndcg: float
    seed: int


@dataclass(frozen=True)
class UserScanResult:
    records: list
    points: list
    omitted_ns: list


def truncate_history(items: np.ndarray, timestamps: np.ndarray, n: int, seed: int):
    """Uniform subsample of n events, returned in ascending timestamp order.

    The inputs are already time-ordered (ties by log position), so sorting
    the sampled positions preserves that order.
    """
    if not 1 <= n <= len(items):
        raise ValueError(f"n must be in [1, {len(items)}], got {n}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(items), size=n, replace=False))
    return items[idx], timestamps[idx]


def _score_users(model: Recommender, histories: list[np.ndarray]) -> np.ndarray:
    """Batch-score unique-item histories via a sparse indicator matrix."""
    indptr = np.zeros(len(histories) + 1, dtype=np.int64)
    for r, h in enumerate(histories):
        indptr[r + 1] = indptr[r] + len(h)
    indices = np.concatenate(histories) if histories else np.empty(0, dtype=np.int64)
    data = np.ones(len(indices), dtype=np.float64)
    mat = sp.csr_matrix((data, indices, indptr), shape=(len(histories), model.n_items))
    return np.asarray(model.score_batch(mat), dtype=np.float64)


def run_user_scan(
    config: UserScanConfig,
    uscan: UserScanSplit,
    model: Recommender,
    run_log_path=None,
) -> UserScanResult:
    """Evaluate HR@K / NDCG@K over the N grid with per-(user, N) derived seeds."""
    records = _read_run_log(run_log_path)
    done = {(r.user, r.n) for r in records}

    eligible_prev = None
    omitted = []
    for n in config.n_grid:
        eligible = [rec for rec in uscan.records if len(rec.input_items) >= n]
        if eligible_prev is not None and len(eligible) > eligible_prev:
            raise AssertionError("eligible user count must be non-increasing in N")
        eligible_prev = len(eligible)
        if not eligible:
            log.warning("no users with at least %d input events; point omitted", n)
            omitted.append(int(n))
            continue

        todo = [rec for rec in eligible if (rec.user_id, n) not in done]
        new_records = []
        for start in range(0, len(todo), _SCORE_CHUNK):
            chunk = todo[start : start + _SCORE_CHUNK]
            histories = []
            seeds = []
            for rec in chunk:
                seed = derive_seed(config.base_seed, int(rec.user_id), int(n))
                seeds.append(seed)
                items, _ = truncate_history(rec.input_items, rec.input_ts, n, seed)
                histories.append(np.unique(items))
            scores = _score_users(model, histories)
            if config.filter_seen:
                for r, h in enumerate(histories):
                    scores[r, h] = ranking.NEG_INF
            targets = np.asarray([int(rec.holdout_items[0]) for rec in chunk], dtype=np.int64)
            ranks = ranking.rank_rows(scores, targets)
            for r, rec in enumerate(chunk):
                for k in config.k_list:
                    # the exclusion sentinel is n_items + 1, so cap k at the catalog
                    hit = 1.0 if ranks[r] <= min(k, model.n_items) else 0.0
                    ndcg = float(1.0 / np.log2(ranks[r] + 1.0)) if hit else 0.0
                    new_records.append(
                        UserRecord(user=int(rec.user_id), n=int(n), k=int(k),
                                   hr=hit, ndcg=ndcg, seed=seeds[r])
                    )
        _append_run_log(run_log_path, new_records)
        records.extend(new_records)

    records.sort(key=lambda r: (r.n, r.k, r.user))
    points = aggregate_user_records(records, config)
    return UserScanResult(records=records, points=points, omitted_ns=omitted)


def aggregate_user_records(records: Sequence[UserRecord], config: UserScanConfig) -> list[MetricPoint]:
    by_cell: dict = {}
    for rec in records:
        by_cell.setdefault((rec.n, rec.k), []).append(rec)
    points = []
    for (n, k) in sorted(by_cell):
        cell = sorted(by_cell[(n, k)], key=lambda r: r.user)
        ci_seed = derive_seed(config.base_seed, 1299709, n, k)
        for metric, getter in (("hr", lambda r: r.hr), ("ndcg", lambda r: r.ndcg)):
            points.append(
                summarize([getter(r) for r in cell], n=n, metric=metric, k=k,
                          n_boot=config.n_boot, seed=ci_seed)
            )
    return points


def _read_run_log(path) -> list:
    records = []
    if path and os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    rec.pop("type", None)
                    records.append(UserRecord(**rec))
    return records


def _append_run_log(path, records) -> None:
    if not path:
        return
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"type": "result", **asdict(rec)}) + "\n")
