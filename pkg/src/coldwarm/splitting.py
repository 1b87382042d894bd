"""Leakage-free global-timepoint splitting and the scan-specific set constructions.

The global timepoint (GT) is the order statistic of all event timestamps at
0-based rank ``ceil(q * n) - 1``; ties stay on the train side. Users with any
event after GT become test users; the remaining users are partitioned at
random into train and validation users. Train therefore contains only events
of users that are neither test nor validation, which keeps it fixed across
probe items in the item-based construction.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionLog
from .errors import DataError, EmptyTestError
from .seeding import derive_seed

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class TestUserRecord:
    """Pre-GT input sequence and post-GT holdout of one test user, time-ordered."""

    __test__ = False  # not a pytest class, despite the name

    user_id: int
    input_items: np.ndarray = field(repr=False)
    input_ts: np.ndarray = field(repr=False)
    input_weights: np.ndarray = field(repr=False)
    holdout_items: np.ndarray = field(repr=False)
    holdout_ts: np.ndarray = field(repr=False)
    holdout_weights: np.ndarray = field(repr=False)

    def __repr__(self):
        return (
            f"TestUserRecord(user={self.user_id}, n_input={len(self.input_items)}, "
            f"n_holdout={len(self.holdout_items)})"
        )


@dataclass(frozen=True)
class ValidationPair:
    user_id: int
    input_items: np.ndarray = field(repr=False)
    input_ts: np.ndarray = field(repr=False)
    input_weights: np.ndarray = field(repr=False)
    target_item: int = 0
    target_ts: int = 0
    target_weight: float = 1.0


@dataclass(frozen=True)
class GlobalTimepointSplit:
    gt: int
    q: float
    val_fraction: float
    seed: int
    train: InteractionLog
    validation: list
    test: list
    dropped_validation_users: int
    empty_input_test_users: int

    @property
    def n_items(self) -> int:
        return self.train.n_items

    @property
    def n_users(self) -> int:
        return self.train.n_users


@dataclass(frozen=True)
class ItemScanSplit:
    """Per-probe-item construction: fixed base train set plus the probe pool."""

    probe_item: int
    base_train: InteractionLog
    pool_users: np.ndarray = field(repr=False)
    pool_ts: np.ndarray = field(repr=False)
    pool_weights: np.ndarray = field(repr=False)
    eval_users: list = field(repr=False, default_factory=list)
    validation: list = field(repr=False, default_factory=list)

    @property
    def pool_size(self) -> int:
        return len(self.pool_users)


@dataclass(frozen=True)
class UserScanSplit:
    """Test records truncated to a single first-post-GT holdout event."""

    records: list
    discarded_events: int


def _sorted_user_slice(items, ts, weights, order):
    return items[order].copy(), ts[order].copy(), weights[order].copy()


def split_global_timepoint(
    log: InteractionLog, q: float, val_fraction: float, seed: int
) -> GlobalTimepointSplit:
    """Build the train / validation / test partition around the GT quantile.

    ``val_fraction`` of the non-test users (rounded) become validation users;
    their last pre-GT event is the tuning target and the earlier ones the
    input. Validation users with fewer than two events are dropped (counted).
    Users whose whole history is post-GT are kept as test users with an empty
    input sequence and counted.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0,1), got {q}")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0,1), got {val_fraction}")
    n = len(log)
    if n == 0:
        raise DataError("cannot split an empty log")
    ts_sorted = np.sort(log.timestamps)
    if ts_sorted[0] == ts_sorted[-1]:
        raise DataError("log needs at least two distinct timestamps")
    rank = max(int(math.ceil(q * n)) - 1, 0)
    gt = int(ts_sorted[rank])
    if gt == int(ts_sorted[-1]):
        raise EmptyTestError(f"global timepoint {gt} equals the maximum timestamp; empty test set")

    post = log.timestamps > gt
    is_test_user = np.zeros(log.n_users, dtype=bool)
    is_test_user[log.users[post]] = True

    # per-user event lists, ordered by (timestamp, original position)
    order = np.lexsort((np.arange(n), log.timestamps, log.users))
    u_sorted = log.users[order]
    boundaries = np.flatnonzero(np.diff(u_sorted)) + 1
    events_by_user = {int(log.users[g[0]]): g for g in np.split(order, boundaries)}

    test_records = []
    empty_input = 0
    for uid in sorted(np.flatnonzero(is_test_user).tolist()):
        g = events_by_user[uid]
        pre = g[log.timestamps[g] <= gt]
        post_g = g[log.timestamps[g] > gt]
        if len(pre) == 0:
            empty_input += 1
        test_records.append(
            TestUserRecord(
                user_id=uid,
                input_items=log.items[pre].copy(),
                input_ts=log.timestamps[pre].copy(),
                input_weights=log.weights[pre].copy(),
                holdout_items=log.items[post_g].copy(),
                holdout_ts=log.timestamps[post_g].copy(),
                holdout_weights=log.weights[post_g].copy(),
            )
        )

    has_events = np.zeros(log.n_users, dtype=bool)
    has_events[log.users] = True
    remaining = np.flatnonzero(~is_test_user & has_events)
    rng = np.random.default_rng(seed)
    n_val = int(round(val_fraction * len(remaining)))
    val_users = set()
    if n_val > 0:
        val_users = set(rng.choice(remaining, size=n_val, replace=False).tolist())

    validation = []
    dropped = 0
    for uid in sorted(val_users):
        g = events_by_user[uid]
        if len(g) < 2:
            dropped += 1
            continue
        target = g[-1]
        inputs = g[:-1]
        validation.append(
            ValidationPair(
                user_id=uid,
                input_items=log.items[inputs].copy(),
                input_ts=log.timestamps[inputs].copy(),
                input_weights=log.weights[inputs].copy(),
                target_item=int(log.items[target]),
                target_ts=int(log.timestamps[target]),
                target_weight=float(log.weights[target]),
            )
        )

    train_user_mask = ~is_test_user
    if val_users:
        train_user_mask[list(val_users)] = False
    train = log.restrict(train_user_mask[log.users])
    assert len(train) == 0 or int(train.timestamps.max()) <= gt

    return GlobalTimepointSplit(
        gt=gt,
        q=q,
        val_fraction=val_fraction,
        seed=seed,
        train=train,
        validation=validation,
        test=test_records,
        dropped_validation_users=dropped,
        empty_input_test_users=empty_input,
    )


def _scrub_record(rec: TestUserRecord, item: int) -> TestUserRecord:
    keep_in = rec.input_items != item
    keep_out = rec.holdout_items != item
    if keep_in.all() and keep_out.all():
        return rec
    return TestUserRecord(
        user_id=rec.user_id,
        input_items=rec.input_items[keep_in],
        input_ts=rec.input_ts[keep_in],
        input_weights=rec.input_weights[keep_in],
        holdout_items=rec.holdout_items[keep_out],
        holdout_ts=rec.holdout_ts[keep_out],
        holdout_weights=rec.holdout_weights[keep_out],
    )


def build_item_scan_split(split: GlobalTimepointSplit, probe_item: int) -> ItemScanSplit:
    """Isolate one probe item: pull its events out of train, scrub it from eval.

    The probe pool holds every training interaction of the probe item; the
    base train set is identical across probe items up to the probed items'
    own events. Validation pairs whose target is the probe item are dropped.
    """
    if not 0 <= probe_item < split.n_items:
        raise ValueError(f"probe item {probe_item} outside catalog of {split.n_items}")
    train = split.train
    pool_mask = train.items == probe_item
    if not pool_mask.any():
        raise DataError(f"probe item {probe_item} has no training interactions")

    eval_users = [_scrub_record(rec, probe_item) for rec in split.test]
    validation = []
    for pair in split.validation:
        if pair.target_item == probe_item:
            continue
        keep = pair.input_items != probe_item
        if keep.all():
            validation.append(pair)
        else:
            validation.append(
                ValidationPair(
                    user_id=pair.user_id,
                    input_items=pair.input_items[keep],
                    input_ts=pair.input_ts[keep],
                    input_weights=pair.input_weights[keep],
                    target_item=pair.target_item,
                    target_ts=pair.target_ts,
                    target_weight=pair.target_weight,
                )
            )

    return ItemScanSplit(
        probe_item=probe_item,
        base_train=train.restrict(~pool_mask),
        pool_users=train.users[pool_mask].copy(),
        pool_ts=train.timestamps[pool_mask].copy(),
        pool_weights=train.weights[pool_mask].copy(),
        eval_users=eval_users,
        validation=validation,
    )


def materialize_train(iss: ItemScanSplit, n: int, seed: int) -> InteractionLog:
    """Base train plus ``n`` probe events sampled uniformly without replacement."""
    pool = iss.pool_size
    if not 1 <= n <= pool:
        raise ValueError(f"n must be in [1, {pool}], got {n}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(pool, size=n, replace=False))
    base = iss.base_train
    return InteractionLog(
        users=np.concatenate([base.users, iss.pool_users[idx]]),
        items=np.concatenate(
            [base.items, np.full(n, iss.probe_item, dtype=base.items.dtype)]
        ),
        timestamps=np.concatenate([base.timestamps, iss.pool_ts[idx]]),
        weights=np.concatenate([base.weights, iss.pool_weights[idx]]),
        user_keys=base.user_keys,
        item_keys=base.item_keys,
        n_users=base.n_users,
        n_items=base.n_items,
    )


def build_user_scan_split(split: GlobalTimepointSplit) -> UserScanSplit:
    """Keep only each test user's first post-GT event as the ground truth."""
    records = []
    discarded = 0
    for rec in split.test:
        n_hold = len(rec.holdout_items)
        discarded += max(n_hold - 1, 0)
        records.append(
            TestUserRecord(
                user_id=rec.user_id,
                input_items=rec.input_items,
                input_ts=rec.input_ts,
                input_weights=rec.input_weights,
                holdout_items=rec.holdout_items[:1],
                holdout_ts=rec.holdout_ts[:1],
                holdout_weights=rec.holdout_weights[:1],
            )
        )
    return UserScanSplit(records=records, discarded_events=discarded)


def item_scan_seed(base_seed: int, item: int, n: int) -> int:
    return derive_seed(base_seed, item, n)


# -- split export / import ---------------------------------------------------


def export_split(split: GlobalTimepointSplit, out_dir) -> None:
    """Write train/validation/test CSVs (external keys) plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    log = split.train
    ukeys = log.user_keys
    ikeys = log.item_keys

    with open(os.path.join(out_dir, "train.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "timestamp", "weight"])
        for u, i, t, wt in split.train.events():
            w.writerow([ukeys[u], ikeys[i], t, repr(wt)])

    with open(os.path.join(out_dir, "validation.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "timestamp", "weight", "role"])
        for pair in split.validation:
            for i, t, wt in zip(pair.input_items, pair.input_ts, pair.input_weights):
                w.writerow([ukeys[pair.user_id], ikeys[i], t, repr(float(wt)), "input"])
            w.writerow(
                [
                    ukeys[pair.user_id],
                    ikeys[pair.target_item],
                    pair.target_ts,
                    repr(pair.target_weight),
                    "target",
                ]
            )

    with open(os.path.join(out_dir, "test.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "timestamp", "weight", "role"])
        for rec in split.test:
            for i, t, wt in zip(rec.input_items, rec.input_ts, rec.input_weights):
                w.writerow([ukeys[rec.user_id], ikeys[i], t, repr(float(wt)), "input"])
            for i, t, wt in zip(rec.holdout_items, rec.holdout_ts, rec.holdout_weights):
                w.writerow([ukeys[rec.user_id], ikeys[i], t, repr(float(wt)), "holdout"])

    manifest = {
        "format_version": 1,
        "gt": split.gt,
        "q": split.q,
        "val_fraction": split.val_fraction,
        "seed": split.seed,
        "n_users": split.n_users,
        "n_items": split.n_items,
        "n_train_events": len(split.train),
        "n_validation_pairs": len(split.validation),
        "n_test_users": len(split.test),
        "counters": {
            "dropped_validation_users": split.dropped_validation_users,
            "empty_input_test_users": split.empty_input_test_users,
        },
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_rows(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        yield from reader


def load_split(out_dir, log: InteractionLog) -> GlobalTimepointSplit:
    """Rebuild a split from exported files, using ``log``'s key maps."""
    with open(os.path.join(out_dir, MANIFEST_NAME), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("n_users") != log.n_users or manifest.get("n_items") != log.n_items:
        raise DataError("split manifest does not match the provided interaction log")
    uidx = log.user_index()
    iidx = log.item_index()
    gt = int(manifest["gt"])

    def dense(row):
        try:
            return uidx[row["user"]], iidx[row["item"]], int(row["timestamp"]), float(row["weight"])
        except KeyError as exc:
            raise DataError(f"split references unknown key {exc}") from None

    # train holds every event of each train user, so the user set determines it
    n_train_rows = 0
    is_train_user = np.zeros(log.n_users, dtype=bool)
    for row in _read_rows(os.path.join(out_dir, "train.csv")):
        u, _, _, _ = dense(row)
        is_train_user[u] = True
        n_train_rows += 1
    train = log.restrict(is_train_user[log.users])
    if len(train) != n_train_rows or n_train_rows != manifest["n_train_events"]:
        raise DataError("train.csv does not match the interaction log / manifest")

    validation = []
    current = None
    for row in _read_rows(os.path.join(out_dir, "validation.csv")):
        u, i, t, w = dense(row)
        if current is None or current["user"] != u:
            current = {"user": u, "items": [], "ts": [], "weights": []}
        if row["role"] == "input":
            current["items"].append(i)
            current["ts"].append(t)
            current["weights"].append(w)
        else:
            validation.append(
                ValidationPair(
                    user_id=u,
                    input_items=np.asarray(current["items"], dtype=np.int64),
                    input_ts=np.asarray(current["ts"], dtype=np.int64),
                    input_weights=np.asarray(current["weights"], dtype=np.float64),
                    target_item=i,
                    target_ts=t,
                    target_weight=w,
                )
            )
            current = None

    test_records = []
    by_user: dict = {}
    user_order = []
    for row in _read_rows(os.path.join(out_dir, "test.csv")):
        u, i, t, w = dense(row)
        if u not in by_user:
            by_user[u] = {"in": [], "out": []}
            user_order.append(u)
        by_user[u]["in" if row["role"] == "input" else "out"].append((i, t, w))
    for u in user_order:
        rec_in = by_user[u]["in"]
        rec_out = by_user[u]["out"]
        test_records.append(
            TestUserRecord(
                user_id=u,
                input_items=np.asarray([e[0] for e in rec_in], dtype=np.int64),
                input_ts=np.asarray([e[1] for e in rec_in], dtype=np.int64),
                input_weights=np.asarray([e[2] for e in rec_in], dtype=np.float64),
                holdout_items=np.asarray([e[0] for e in rec_out], dtype=np.int64),
                holdout_ts=np.asarray([e[1] for e in rec_out], dtype=np.int64),
                holdout_weights=np.asarray([e[2] for e in rec_out], dtype=np.float64),
            )
        )

    split = GlobalTimepointSplit(
        gt=gt,
        q=float(manifest["q"]),
        val_fraction=float(manifest["val_fraction"]),
        seed=int(manifest["seed"]),
        train=train,
        validation=validation,
        test=test_records,
        dropped_validation_users=int(manifest["counters"]["dropped_validation_users"]),
        empty_input_test_users=int(manifest["counters"]["empty_input_test_users"]),
    )
    if len(split.validation) != manifest["n_validation_pairs"] or len(split.test) != manifest[
        "n_test_users"
    ]:
        raise DataError("split files do not match their manifest")
    return split
