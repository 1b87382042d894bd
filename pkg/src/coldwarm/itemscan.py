"""Item-based threshold scan: subsample a probe item's training interactions,
retrain, and measure how often the item resurfaces in test recommendations.

Work is a pool of independent (item, N) tasks with per-task derived seeds, so
results are identical for any execution order or worker count. Every task
appends its records to a newline-delimited run log, which makes interrupted
scans resumable and aggregation a pure fold over the log.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import ranking
from .data import build_matrix
from .errors import ScanAbortError
from .metrics import EvalUnit, MetricPoint, summarize
from .models import Recommender, recommend_topk, train_model
from .seeding import derive_seed
from .splitting import (
    GlobalTimepointSplit,
    ItemScanSplit,
    build_item_scan_split,
    materialize_train,
)

log = logging.getLogger(__name__)

DEFAULT_N_GRID = (1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 30, 50)
DEFAULT_K_LIST = (1, 5, 10, 50, 100)


@dataclass(frozen=True)
class ItemScanConfig:
    model_kind: str
    model_params: dict
    n_grid: tuple = DEFAULT_N_GRID
    s_items: int = 1000
    k_list: tuple = DEFAULT_K_LIST
    base_seed: int = 0
    filter_seen: bool = True
    matrix_mode: str = "binary"
    n_boot: int = 1000
    max_failure_rate: float = 0.1
    repeats: int = 1  # subsamples per (item, N) cell, averaged before aggregation

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or grid[0] < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("n_grid must be strictly ascending with min >= 1")
        if self.s_items < 1:
            raise ValueError("s_items must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        klist = tuple(int(k) for k in self.k_list)
        if not klist or min(klist) < 1:
            raise ValueError("k_list entries must be >= 1")
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "k_list", klist)


@dataclass(frozen=True)
class ItemRecord:
    """One (probe item, N, K) measurement."""

    item: int
    item_key: str
    pool: int
    n: int
    k: int
    hr_star: float
    ndcg_star: float
    n_units: int
    seed: int


@dataclass(frozen=True)
class ItemScanResult:
    records: list
    points: list
    skipped: dict
    failures: list
    probe_items: np.ndarray = field(repr=False, default=None)


@dataclass
class ItemEvalOutcome:
    hr: dict
    ndcg: dict
    n_units: int
    skipped_users: int
    units: Optional[list] = None


def sample_probe_items(train, s: int, seed: int) -> np.ndarray:
    """Uniform sample (without replacement) of items that have training events."""
    eligible = np.unique(train.items)
    if s > len(eligible):
        warnings.warn(
            f"requested {s} probe items but only {len(eligible)} have training "
            "interactions; using all of them",
            stacklevel=2,
        )
        s = len(eligible)
    rng = np.random.default_rng(seed)
    return rng.choice(eligible, size=s, replace=False)


def _masked_step_scores(model: Recommender, rec, filter_seen: bool) -> np.ndarray:
    """Score matrix with one row per holdout step, seen items set to -inf."""
    n_hold = len(rec.holdout_items)
    scores = model.score_steps(rec.input_items, rec.holdout_items[:-1])
    assert scores.shape == (n_hold, model.n_items)
    if filter_seen:
        if len(rec.input_items):
            scores[:, np.unique(rec.input_items)] = ranking.NEG_INF
        for j, item in enumerate(rec.holdout_items[:-1].tolist()):
            scores[j + 1 :, item] = ranking.NEG_INF
    return scores


def successive_evaluate_item(
    model: Recommender,
    probe_item: int,
    eval_users: Sequence,
    k_list: Sequence[int],
    filter_seen: bool,
    collect_units: bool = True,
) -> ItemEvalOutcome:
    """Successive evaluation of one probe item over the test users.

    A user with n holdout events yields n units; unit j scores the history
    input + holdout[:j]. Returns per-K HR*/NDCG* over all units, and the
    units themselves (top-max(K) lists) unless ``collect_units`` is off.
    The probe item must already be scrubbed from the eval records.
    """
    k_list = sorted(int(k) for k in k_list)
    kmax = k_list[-1]
    hits = {k: 0 for k in k_list}
    gains = {k: 0.0 for k in k_list}
    n_units = 0
    skipped = 0
    units = [] if collect_units else None

    for rec in eval_users:
        if len(rec.holdout_items) == 0:
            if len(rec.input_items) == 0:
                skipped += 1
            continue
        if probe_item in rec.input_items or probe_item in rec.holdout_items:
            raise ValueError(f"probe item {probe_item} not scrubbed from user {rec.user_id}")
        scores = _masked_step_scores(model, rec, filter_seen)
        ranks = ranking.rank_rows(scores, probe_item)
        for k in k_list:
            # the exclusion sentinel is n_items + 1, so cap k at the catalog
            in_top = ranks <= min(k, model.n_items)
            hits[k] += int(in_top.sum())
            gains[k] += float((1.0 / np.log2(ranks[in_top] + 1.0)).sum())
        if collect_units:
            idx, lengths = ranking.topk_rows(scores, kmax)
            for j in range(len(ranks)):
                units.append(
                    EvalUnit(
                        user_id=rec.user_id,
                        step_index=j,
                        recs=idx[j, : lengths[j]],
                        ground_truth=int(rec.holdout_items[j]),
                    )
                )
        n_units += len(ranks)

    if n_units == 0:
        raise ValueError("no evaluation units: every test user has an empty holdout")
    return ItemEvalOutcome(
        hr={k: hits[k] / n_units for k in k_list},
        ndcg={k: gains[k] / n_units for k in k_list},
        n_units=n_units,
        skipped_users=skipped,
        units=units,
    )


def scan_single_item(
    config: ItemScanConfig,
    split: GlobalTimepointSplit,
    item: int,
    ns: Sequence[int],
) -> tuple[list, list, list]:
    """Run all requested N values for one probe item.

    Returns (records, skips, failures); a failure carries the exception text
    so the caller can decide whether the scan as a whole should abort.
    """
    records, skips, failures = [], [], []
    iss = build_item_scan_split(split, int(item))
    key = split.train.item_keys[int(item)]
    for n in ns:
        if n > iss.pool_size:
            skips.append({"item": int(item), "n": int(n), "pool": iss.pool_size})
            continue
        # the first repeat keeps the documented (base_seed, item, N) stream
        seeds = [derive_seed(config.base_seed, int(item), int(n))] + [
            derive_seed(config.base_seed, int(item), int(n), rep)
            for rep in range(1, config.repeats)
        ]
        try:
            hr = {k: 0.0 for k in config.k_list}
            ndcg = {k: 0.0 for k in config.k_list}
            n_units = 0
            for seed in seeds:
                train_log = materialize_train(iss, n, seed)
                matrix = build_matrix(train_log, mode=config.matrix_mode)
                model = train_model(config.model_kind, matrix, config.model_params)
                outcome = successive_evaluate_item(
                    model, int(item), iss.eval_users, config.k_list,
                    config.filter_seen, collect_units=False,
                )
                for k in config.k_list:
                    hr[k] += outcome.hr[k] / len(seeds)
                    ndcg[k] += outcome.ndcg[k] / len(seeds)
                n_units = outcome.n_units
        except Exception as exc:
            log.warning("item %s N=%d failed: %s", item, n, exc)
            failures.append(
                {"item": int(item), "n": int(n), "seed": seeds[0],
                 "error": f"{type(exc).__name__}: {exc}"}
            )
            continue
        for k in config.k_list:
            records.append(
                ItemRecord(
                    item=int(item), item_key=str(key), pool=iss.pool_size, n=int(n),
                    k=int(k), hr_star=hr[k], ndcg_star=ndcg[k],
                    n_units=n_units, seed=seeds[0],
                )
            )
    return records, skips, failures


_WORKER_STATE: dict = {}


def _init_worker(config, split):
    _WORKER_STATE["config"] = config
    _WORKER_STATE["split"] = split


def _worker_scan(args):
    item, ns = args
    return scan_single_item(_WORKER_STATE["config"], _WORKER_STATE["split"], item, ns)


def aggregate_records(records: Sequence[ItemRecord], config: ItemScanConfig) -> list[MetricPoint]:
    """Fold per-item records into per-(N, K) metric points.

    At each N only items whose probe pool holds at least N events
    contribute; the CI is a bootstrap over those items.
    """
    by_cell: dict = {}
    for rec in records:
        by_cell.setdefault((rec.n, rec.k), []).append(rec)
    points = []
    for (n, k) in sorted(by_cell):
        cell = sorted(by_cell[(n, k)], key=lambda r: r.item)
        cell = [r for r in cell if r.pool >= n]
        if not cell:
            continue
        ci_seed = derive_seed(config.base_seed, 104729, n, k)
        for metric, getter in (("hr_star", lambda r: r.hr_star), ("ndcg_star", lambda r: r.ndcg_star)):
            points.append(
                summarize([getter(r) for r in cell], n=n, metric=metric, k=k,
                          n_boot=config.n_boot, seed=ci_seed)
            )
    return points


def _read_run_log(path) -> tuple[list, list, list]:
    """Load a run log, deduplicating on (item, N, K); the last record wins."""
    records, skips, failures = {}, {}, {}
    if path and os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                kind = rec.pop("type")
                if kind == "result":
                    records[(rec["item"], rec["n"], rec["k"])] = ItemRecord(**rec)
                elif kind == "skip":
                    skips[(rec["item"], rec["n"])] = rec
                elif kind == "failure":
                    failures[(rec["item"], rec["n"])] = rec
    return list(records.values()), list(skips.values()), list(failures.values())


def _append_run_log(path, records, skips, failures):
    if not path:
        return
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"type": "result", **asdict(rec)}) + "\n")
        for skip in skips:
            fh.write(json.dumps({"type": "skip", **skip}) + "\n")
        for failure in failures:
            fh.write(json.dumps({"type": "failure", **failure}) + "\n")


def run_item_scan(
    config: ItemScanConfig,
    split: GlobalTimepointSplit,
    workers: int = 1,
    run_log_path=None,
    probe_items=None,
) -> ItemScanResult:
    """Scan S sampled probe items over the N grid with the configured model.

    Hyperparameters must already be tuned (they are fixed in the config).
    Existing run-log entries are trusted and not recomputed, so an
    interrupted scan resumes where it stopped. Aborts when more than
    ``max_failure_rate`` of the planned tasks fail. ``probe_items`` overrides
    the uniform sample with an explicit item list.
    """
    if probe_items is None:
        probe_items = sample_probe_items(split.train, config.s_items, config.base_seed)
    else:
        probe_items = np.asarray(probe_items, dtype=np.int64)
    records, skips, failures = _read_run_log(run_log_path)
    # a measured task counts as done only when every configured K is on file
    ks_seen: dict = {}
    for r in records:
        ks_seen.setdefault((r.item, r.n), set()).add(r.k)
    done = {task for task, ks in ks_seen.items() if set(config.k_list) <= ks}
    records = [r for r in records if (r.item, r.n) in done]
    done.update((s["item"], s["n"]) for s in skips)
    done.update((f["item"], f["n"]) for f in failures)

    todo = []
    for item in sorted(probe_items.tolist()):
        ns = [n for n in config.n_grid if (item, n) not in done]
        if ns:
            todo.append((item, ns))

    n_tasks = len(probe_items) * len(config.n_grid)
    max_failures = config.max_failure_rate * n_tasks

    def handle(result):
        new_records, new_skips, new_failures = result
        records.extend(new_records)
        skips.extend(new_skips)
        failures.extend(new_failures)
        _append_run_log(run_log_path, new_records, new_skips, new_failures)
        if len(failures) > max_failures:
            raise ScanAbortError(
                f"{len(failures)} of {n_tasks} scan tasks failed "
                f"(limit {config.max_failure_rate:.0%}); aborting"
            )

    if workers <= 1:
        for item, ns in todo:
            handle(scan_single_item(config, split, item, ns))
    else:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(
            max_workers=workers, mp_context=ctx,
            initializer=_init_worker, initargs=(config, split),
        ) as pool:
            for result in pool.map(_worker_scan, todo):
                handle(result)

    records.sort(key=lambda r: (r.item, r.n, r.k))
    points = aggregate_records(records, config)
    return ItemScanResult(
        records=records, points=points,
        skipped={"tasks": sorted((s["item"], s["n"]) for s in skips)},
        failures=failures, probe_items=probe_items,
    )


def stability_audit(
    config: ItemScanConfig,
    split: GlobalTimepointSplit,
    item: int,
    n: int,
    seed_a: int,
    seed_b: int,
    k: int = 10,
) -> float:
    """Top-k overlap between two retrains that differ only in the sampling seed.

    Recommendation lists are produced for every eval user from their input
    history alone (step 0 of the successive evaluation).
    """
    from .metrics import stability_at_k

    iss = build_item_scan_split(split, int(item))
    if n > iss.pool_size:
        raise ValueError(f"N={n} exceeds probe pool of {iss.pool_size}")
    lists = []
    for seed in (seed_a, seed_b):
        matrix = build_matrix(materialize_train(iss, n, seed), mode=config.matrix_mode)
        model = train_model(config.model_kind, matrix, config.model_params)
        lists.append(
            {
                rec.user_id: recommend_topk(model, rec.input_items, k, config.filter_seen)
                for rec in iss.eval_users
                if len(rec.input_items) > 0
            }
        )
    return stability_at_k(lists[0], lists[1], k)
