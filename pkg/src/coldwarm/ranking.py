"""Ranking kernel dispatch: compiled extension when available, numpy otherwise.

Both backends implement the same contract (descending score, ascending item
id on ties, -inf entries excluded from the candidate set) and return
identical arrays, so everything downstream is backend-independent. Set
``COLDWARM_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

import numpy as np

from . import _ranking_py

if os.environ.get("COLDWARM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _ranking_py
else:
    try:
        from . import _ranking_cy as _impl
    except ImportError:
        _impl = _ranking_py

NEG_INF = _ranking_py.NEG_INF


def backend_name() -> str:
    return "cython" if _impl.__name__.endswith("_ranking_cy") else "numpy"


def _as_matrix(scores: np.ndarray) -> np.ndarray:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    return scores[None, :] if scores.ndim == 1 else scores


def rank_rows(scores: np.ndarray, targets) -> np.ndarray:
    """Per-row 1-based rank of a per-row target item (n+1 when excluded)."""
    mat = _as_matrix(scores)
    targets = np.ascontiguousarray(np.broadcast_to(targets, mat.shape[0]), dtype=np.int64)
    return np.asarray(_impl.rank_rows(mat, targets))


def rank_of(scores: np.ndarray, target: int) -> int:
    return int(rank_rows(scores, np.int64(target))[0])


def topk_rows(scores: np.ndarray, k: int):
    """(idx, lengths): per-row top-k ids padded with -1 past ``lengths``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    idx, lengths = _impl.topk_rows(_as_matrix(scores), k)
    return np.asarray(idx), np.asarray(lengths)


def topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k ids of a single score vector, trimmed to the candidate count."""
    idx, lengths = topk_rows(scores, k)
    return idx[0, : lengths[0]]
