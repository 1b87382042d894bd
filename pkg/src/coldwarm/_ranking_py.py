"""Pure-numpy ranking kernels. Reference semantics for the compiled backend.

Ordering is always: descending score, ties broken by ascending item id.
Entries set to -inf are treated as excluded from the candidate set.
"""

import numpy as np

NEG_INF = -np.inf


def rank_rows(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of ``targets[r]`` within row ``r``; n+1 if the target is excluded."""
    m, n = scores.shape
    rows = np.arange(m)
    st = scores[rows, targets]
    higher = (scores > st[:, None]).sum(axis=1)
    ids = np.arange(n)
    tied_before = ((scores == st[:, None]) & (ids[None, :] < targets[:, None])).sum(axis=1)
    ranks = (higher + tied_before + 1).astype(np.int64)
    ranks[st == NEG_INF] = n + 1
    return ranks


def topk_rows(scores: np.ndarray, k: int):
    """Top-k item ids per row; shorter rows padded with -1.

    Returns ``(idx, lengths)`` where ``idx`` is (m, k) int64 and ``lengths``
    counts the non-excluded candidates actually returned per row.
    """
    m, n = scores.shape
    k = min(k, n)
    ids = np.broadcast_to(np.arange(n), (m, n))
    order = np.lexsort((ids, -scores), axis=1)
    idx = order[:, :k].astype(np.int64)
    lengths = np.minimum((scores != NEG_INF).sum(axis=1), k).astype(np.int64)
    pad = np.arange(k)[None, :] >= lengths[:, None]
    idx[pad] = -1
    return idx, lengths
