"""Interaction log ingestion, dense ID maps, dataset statistics, p-core filtering.

The canonical in-memory representation is :class:`InteractionLog`: parallel
numpy arrays of (user, item, timestamp, weight) events plus bijective maps
between external keys and dense indices. Logs produced by :func:`ingest_log`
and :func:`pcore_filter` have densely packed IDs; logs derived through
``restrict`` (train subsets and the like) keep the parent catalog dimensions
so that matrices and score vectors stay aligned across the whole pipeline.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import EmptyFilterError, EmptyLogError, RowError, SchemaError

STATS_COLUMNS = (
    "users",
    "items",
    "interactions",
    "density",
    "avg_user_interactions",
    "avg_item_interactions",
)


@dataclass(frozen=True)
class ColumnSchema:
    """Column mapping for a delimited interaction file.

    Each of ``user``/``item``/``timestamp``/``weight`` is either a 0-based
    column index or, when ``has_header`` is set, a header name.
    """

    user: Union[int, str]
    item: Union[int, str]
    timestamp: Union[int, str]
    weight: Union[int, str, None] = None
    delimiter: str = ","
    has_header: bool = False

    def resolve(self, header: Optional[list[str]]) -> tuple[int, int, int, Optional[int]]:
        """Turn the mapping into concrete column indices."""

        def to_index(spec, name):
            if spec is None:
                return None
            if isinstance(spec, bool):
                raise SchemaError(f"column spec for {name!r} must be an index or name")
            if isinstance(spec, int):
                if spec < 0:
                    raise SchemaError(f"column index for {name!r} must be >= 0")
                return spec
            if header is None:
                raise SchemaError(
                    f"column {name!r} given by name {spec!r} but the schema has no header"
                )
            try:
                return header.index(spec)
            except ValueError:
                raise SchemaError(f"column {spec!r} not found in header {header}") from None

        return (
            to_index(self.user, "user"),
            to_index(self.item, "item"),
            to_index(self.timestamp, "timestamp"),
            to_index(self.weight, "weight"),
        )


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InteractionLog:
    """Event list with dense IDs. Immutable after construction."""

    users: np.ndarray = field(repr=False)
    items: np.ndarray = field(repr=False)
    timestamps: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    user_keys: tuple = field(repr=False)
    item_keys: tuple = field(repr=False)
    n_users: int = 0
    n_items: int = 0
    skipped_rows: int = 0

    def __post_init__(self):
        for arr in (self.users, self.items, self.timestamps, self.weights):
            _readonly(arr)

    def __len__(self) -> int:
        return len(self.users)

    def __repr__(self):
        return (
            f"InteractionLog(n_users={self.n_users}, n_items={self.n_items}, "
            f"n_events={len(self)}, skipped_rows={self.skipped_rows})"
        )

    def events(self) -> Iterator[tuple[int, int, int, float]]:
        """Iterate events as (user_id, item_id, timestamp, weight) tuples."""
        return zip(
            self.users.tolist(),
            self.items.tolist(),
            self.timestamps.tolist(),
            self.weights.tolist(),
        )

    def user_index(self) -> dict:
        return {k: i for i, k in enumerate(self.user_keys)}

    def item_index(self) -> dict:
        return {k: i for i, k in enumerate(self.item_keys)}

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def restrict(self, mask: np.ndarray) -> "InteractionLog":
        """Event subset that keeps the parent catalog dimensions and key maps."""
        return InteractionLog(
            users=self.users[mask],
            items=self.items[mask],
            timestamps=self.timestamps[mask],
            weights=self.weights[mask],
            user_keys=self.user_keys,
            item_keys=self.item_keys,
            n_users=self.n_users,
            n_items=self.n_items,
        )


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    density: float
    avg_user_interactions: float
    avg_item_interactions: float

    def row(self) -> tuple:
        return (
            self.n_users,
            self.n_items,
            self.n_interactions,
            self.density,
            self.avg_user_interactions,
            self.avg_item_interactions,
        )


@dataclass(frozen=True)
class InteractionMatrix:
    """User x item sparse matrix with a declared value mode."""

    csr: sp.csr_matrix = field(repr=False)
    mode: str = "binary"

    @property
    def n_rows(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csr.shape[1]

    def __repr__(self):
        return (
            f"InteractionMatrix({self.n_rows}x{self.n_cols}, "
            f"nnz={self.csr.nnz}, mode={self.mode!r})"
        )


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8", errors="replace") as fh:
            yield from fh
    elif isinstance(source, io.TextIOBase):
        yield from source
    else:  # any iterable of lines
        yield from source


def ingest_log(source, schema: ColumnSchema, on_malformed: str = "skip") -> InteractionLog:
    """Parse a delimited interaction file into an :class:`InteractionLog`.

    Dense IDs are assigned in first-seen order. Malformed rows (wrong field
    count, unparseable timestamp or weight, negative timestamp) are counted
    and skipped, or raise :class:`RowError` when ``on_malformed="abort"``.
    """
    if on_malformed not in ("skip", "abort"):
        raise ValueError(f"on_malformed must be 'skip' or 'abort', got {on_malformed!r}")

    lines = iter(_iter_lines(source))
    header = None
    consumed_header = 0
    if schema.has_header:
        try:
            first = next(lines)
        except StopIteration:
            raise SchemaError("file is empty but a header was expected") from None
        header = [c.strip() for c in first.rstrip("\r\n").split(schema.delimiter)]
        consumed_header = 1
    ucol, icol, tcol, wcol = schema.resolve(header)

    user_ids: dict = {}
    item_ids: dict = {}
    users, items, timestamps, weights = [], [], [], []
    skipped = 0

    for lineno, raw in enumerate(lines, start=1 + consumed_header):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        parts = line.split(schema.delimiter)
        try:
            ukey = parts[ucol]
            ikey = parts[icol]
            ts = int(parts[tcol])
            w = float(parts[wcol]) if wcol is not None else 1.0
        except (IndexError, ValueError) as exc:
            if on_malformed == "abort":
                raise RowError(lineno, f"{exc} in {line!r}")
            skipped += 1
            continue
        if ts < 0 or not math.isfinite(w):
            if on_malformed == "abort":
                raise RowError(lineno, f"invalid timestamp/weight in {line!r}")
            skipped += 1
            continue
        users.append(user_ids.setdefault(ukey, len(user_ids)))
        items.append(item_ids.setdefault(ikey, len(item_ids)))
        timestamps.append(ts)
        weights.append(w)

    return InteractionLog(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        timestamps=np.asarray(timestamps, dtype=np.int64),
        weights=np.asarray(weights, dtype=np.float64),
        user_keys=tuple(user_ids),
        item_keys=tuple(item_ids),
        n_users=len(user_ids),
        n_items=len(item_ids),
        skipped_rows=skipped,
    )


def compute_stats(log: InteractionLog) -> DatasetStats:
    """Dataset summary row: counts, density, average interactions per entity."""
    n = len(log)
    if n == 0 or log.n_users == 0 or log.n_items == 0:
        raise EmptyLogError("cannot compute statistics of an empty log")
    return DatasetStats(
        n_users=log.n_users,
        n_items=log.n_items,
        n_interactions=n,
        density=n / (log.n_users * log.n_items),
        avg_user_interactions=n / log.n_users,
        avg_item_interactions=n / log.n_items,
    )


def write_stats_csv(stats: DatasetStats, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        writer.writerow([repr(v) if isinstance(v, float) else v for v in stats.row()])


def _densify(log: InteractionLog, keep: np.ndarray) -> InteractionLog:
    """Rebuild a log from the kept events with freshly packed IDs."""
    users = log.users[keep]
    items = log.items[keep]
    new_user, user_fwd = np.unique(users, return_inverse=True)
    new_item, item_fwd = np.unique(items, return_inverse=True)
    # np.unique sorts, which would reorder IDs; remap to first-seen order
    user_order = _first_seen_order(user_fwd, len(new_user))
    item_order = _first_seen_order(item_fwd, len(new_item))
    return InteractionLog(
        users=user_order[user_fwd],
        items=item_order[item_fwd],
        timestamps=log.timestamps[keep].copy(),
        weights=log.weights[keep].copy(),
        user_keys=tuple(np.asarray(log.user_keys, dtype=object)[new_user][np.argsort(user_order)]),
        item_keys=tuple(np.asarray(log.item_keys, dtype=object)[new_item][np.argsort(item_order)]),
        n_users=len(new_user),
        n_items=len(new_item),
    )


def _first_seen_order(inverse: np.ndarray, n: int) -> np.ndarray:
    """Map unique-group numbers to ranks in order of first appearance."""
    first_pos = np.full(n, len(inverse), dtype=np.int64)
    np.minimum.at(first_pos, inverse, np.arange(len(inverse)))
    order = np.empty(n, dtype=np.int64)
    order[np.argsort(first_pos, kind="stable")] = np.arange(n)
    return order


def pcore_filter(log: InteractionLog, p: int) -> InteractionLog:
    """Iterate to the p-core fixed point.

    Keeps users with at least ``p`` interactions and items with at least
    ``p`` distinct users, removing violators until nothing changes, then
    re-densifies the IDs.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if len(log) == 0:
        raise EmptyLogError("cannot p-core filter an empty log")

    keep = np.ones(len(log), dtype=bool)
    while True:
        users = log.users[keep]
        items = log.items[keep]
        user_deg = np.bincount(users, minlength=log.n_users)
        pair_codes = np.unique(users * log.n_items + items)
        item_udeg = np.bincount(pair_codes % log.n_items, minlength=log.n_items)
        new_keep = keep & (user_deg[log.users] >= p) & (item_udeg[log.items] >= p)
        if np.array_equal(new_keep, keep):
            break
        keep = new_keep

    if not keep.any():
        raise EmptyFilterError(f"{p}-core filtering removed every interaction")
    return _densify(log, keep)


def build_matrix(log: InteractionLog, mode: str = "binary") -> InteractionMatrix:
    """Collapse events into a user x item sparse matrix.

    Duplicate (user, item) pairs collapse to a single entry: value 1 in
    binary mode, the latest-timestamp weight (ties broken by later event
    position) in weighted mode.
    """
    if mode not in ("binary", "weighted"):
        raise ValueError(f"mode must be 'binary' or 'weighted', got {mode!r}")
    shape = (log.n_users, log.n_items)
    if len(log) == 0:
        return InteractionMatrix(csr=sp.csr_matrix(shape, dtype=np.float64), mode=mode)

    order = np.lexsort((np.arange(len(log)), log.timestamps, log.items, log.users))
    u = log.users[order]
    i = log.items[order]
    last = np.ones(len(u), dtype=bool)
    last[:-1] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    rows = u[last]
    cols = i[last]
    if mode == "binary":
        vals = np.ones(last.sum(), dtype=np.float64)
    else:
        vals = log.weights[order][last]
    csr = sp.csr_matrix((vals, (rows, cols)), shape=shape, dtype=np.float64)
    csr.sort_indices()
    return InteractionMatrix(csr=csr, mode=mode)
