"""Classical recommenders behind one scoring interface, plus random-search tuning.

All built-in models are linear in the binary history indicator, which the
scan code exploits: scoring a growing history is a cumulative sum of
per-item contribution rows. External models only need to subclass
:class:`Recommender` and implement ``score``; everything else has generic
fallbacks.
"""

from __future__ import annotations

import itertools
import json
import logging
import os

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import ranking
from .data import InteractionMatrix
from .errors import TrainingError, TuningError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

DEFAULT_GRIDS = {
    "ease": {"lam": [1.0, 10.0, 50.0, 100.0, 300.0, 500.0, 1000.0]},
    "puresvd": {"factors": [16, 32, 64, 128, 256, 512]},
    "itemknn": {"neighbors": [20, 50, 100, 200, 500]},
    "popularity": {},
}


class Recommender:
    """Scoring interface: a trained model maps a history to catalog scores."""

    kind = "abstract"

    def __init__(self, n_items: int):
        self.n_items = n_items

    def params(self) -> dict:
        return {}

    def score(self, history) -> np.ndarray:
        """Score vector of length n_items for one history (multiset of item ids)."""
        raise NotImplementedError

    def score_batch(self, histories: sp.csr_matrix) -> np.ndarray:
        """Score one history per row of a binary indicator matrix."""
        out = np.empty((histories.shape[0], self.n_items), dtype=np.float64)
        for r in range(histories.shape[0]):
            out[r] = self.score(histories.indices[histories.indptr[r] : histories.indptr[r + 1]])
        return out

    def score_steps(self, base_items, added_items) -> np.ndarray:
        """Scores for the growing histories base, base+added[:1], base+added[:2], ...

        Returns ``len(added_items) + 1`` rows. Duplicate items contribute once.
        """
        base = list(np.asarray(base_items, dtype=np.int64))
        out = np.empty((len(added_items) + 1, self.n_items), dtype=np.float64)
        out[0] = self.score(np.asarray(base, dtype=np.int64))
        for j, item in enumerate(np.asarray(added_items, dtype=np.int64)):
            base.append(int(item))
            out[j + 1] = self.score(np.asarray(base, dtype=np.int64))
        return out

    def _arrays(self) -> dict:
        raise NotImplementedError(f"{self.kind} models do not support serialization")

    def save(self, path) -> None:
        """Write the model as a directory: header.json plus one .npy per array.

        The layout is byte-deterministic, so identical models serialize to
        identical files.
        """
        os.makedirs(path, exist_ok=True)
        header = {
            "kind": self.kind,
            "version": FORMAT_VERSION,
            "params": self.params(),
            "n_items": self.n_items,
        }
        with open(os.path.join(path, "header.json"), "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for name, arr in self._arrays().items():
            np.save(os.path.join(path, f"{name}.npy"), arr)


class _LinearRecommender(Recommender):
    """score(history) = sum of one contribution row per distinct history item."""

    def _contrib_rows(self, items: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score(self, history) -> np.ndarray:
        items = np.unique(np.asarray(history, dtype=np.int64))
        if len(items) == 0:
            return np.zeros(self.n_items, dtype=np.float64)
        return self._contrib_rows(items).sum(axis=0)

    def score_steps(self, base_items, added_items) -> np.ndarray:
        added = np.asarray(added_items, dtype=np.int64)
        seen = set(np.asarray(base_items, dtype=np.int64).tolist())
        rows = np.zeros((len(added) + 1, self.n_items), dtype=np.float64)
        rows[0] = self.score(np.asarray(base_items, dtype=np.int64))
        for j, item in enumerate(added.tolist()):
            if item not in seen:
                seen.add(item)
                rows[j + 1] = self._contrib_rows(np.asarray([item], dtype=np.int64))[0]
        return np.cumsum(rows, axis=0)


def _frozen(arr: np.ndarray) -> np.ndarray:
    # trained models are shared across threads/processes; keep them read-only
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class EaseModel(_LinearRecommender):
    """Item-item weight matrix from the closed-form zero-diagonal ridge solve."""

    kind = "ease"

    def __init__(self, b: np.ndarray, lam: float):
        super().__init__(n_items=b.shape[0])
        self.b = _frozen(b)
        self.lam = lam

    def params(self):
        return {"lam": self.lam}

    def _contrib_rows(self, items):
        return self.b[items]

    def score_batch(self, histories):
        return np.asarray(histories @ self.b)

    def _arrays(self):
        return {"b": self.b}


class PureSvdModel(_LinearRecommender):
    """Truncated right singular factors; scores are projections onto their span."""

    kind = "puresvd"

    def __init__(self, v: np.ndarray, factors: int, singular_values: np.ndarray):
        super().__init__(n_items=v.shape[0])
        self.v = _frozen(v)
        self.factors = factors
        self.singular_values = _frozen(singular_values)

    @property
    def effective_rank(self) -> int:
        return self.v.shape[1]

    def params(self):
        return {"factors": self.factors}

    def _contrib_rows(self, items):
        return self.v[items] @ self.v.T

    def score_steps(self, base_items, added_items):
        # accumulate in factor space, project once
        added = np.asarray(added_items, dtype=np.int64)
        seen = set(np.asarray(base_items, dtype=np.int64).tolist())
        latent = np.zeros((len(added) + 1, self.v.shape[1]), dtype=np.float64)
        base = np.unique(np.asarray(base_items, dtype=np.int64))
        if len(base):
            latent[0] = self.v[base].sum(axis=0)
        for j, item in enumerate(added.tolist()):
            if item not in seen:
                seen.add(item)
                latent[j + 1] = self.v[item]
        return np.cumsum(latent, axis=0) @ self.v.T

    def score_batch(self, histories):
        return (histories @ self.v) @ self.v.T

    def _arrays(self):
        return {"v": self.v, "singular_values": self.singular_values}


class ItemKnnModel(_LinearRecommender):
    """Cosine item-item similarities, each column truncated to its top-k."""

    kind = "itemknn"

    def __init__(self, sim: sp.csc_matrix, neighbors: int):
        super().__init__(n_items=sim.shape[0])
        sim.data.setflags(write=False)
        self.sim = sim
        self.neighbors = neighbors
        self._sim_t = sim.T.tocsr()

    def params(self):
        return {"neighbors": self.neighbors}

    def _contrib_rows(self, items):
        return np.asarray(self._sim_t[items].todense())

    def score_batch(self, histories):
        return np.asarray((histories @ self._sim_t).todense())

    def _arrays(self):
        return {
            "sim_data": self.sim.data,
            "sim_indices": self.sim.indices,
            "sim_indptr": self.sim.indptr,
            "sim_shape": np.asarray(self.sim.shape, dtype=np.int64),
        }


class PopularityModel(Recommender):
    """History-independent baseline: items scored by training popularity."""

    kind = "popularity"

    def __init__(self, counts: np.ndarray):
        super().__init__(n_items=len(counts))
        self.counts = _frozen(counts)

    def score(self, history):
        return self.counts.copy()

    def score_batch(self, histories):
        return np.tile(self.counts, (histories.shape[0], 1))

    def score_steps(self, base_items, added_items):
        return np.tile(self.counts, (len(added_items) + 1, 1))

    def _arrays(self):
        return {"counts": self.counts}


def train_ease(matrix: InteractionMatrix, lam: float) -> EaseModel:
    """Closed-form solve: B = -P / diag(P) with P = (X'X + lam I)^-1, diag(B) = 0."""
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    x = matrix.csr
    gram = np.asarray((x.T @ x).todense(), dtype=np.float64)
    diag_idx = np.arange(gram.shape[0])
    gram[diag_idx, diag_idx] += lam
    try:
        p = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise TrainingError(f"ridge system solve failed: {exc}") from exc
    if not np.isfinite(p).all():
        raise TrainingError("ridge system solve produced non-finite values")
    b = -p / np.diag(p)[None, :]
    b[diag_idx, diag_idx] = 0.0
    return EaseModel(b=b, lam=float(lam))


def train_puresvd(
    matrix: InteractionMatrix, factors: int, seed: int = 0, tol: float = 1e-10
) -> PureSvdModel:
    """Top-``factors`` right singular vectors of the interaction matrix.

    Uses the iterative sparse solver with a seeded start vector; tiny or
    full-rank problems fall back to a dense decomposition because the
    iterative method requires k < min(shape). Factors beyond the numerical
    rank are discarded (see ``effective_rank``).
    """
    x = matrix.csr
    m = min(x.shape)
    if not 1 <= factors <= m:
        raise ValueError(f"factors must be in [1, {m}], got {factors}")
    if factors < m and m > 256:
        v0 = np.random.default_rng(seed).standard_normal(m)
        u, s, vt = spla.svds(x, k=factors, tol=tol, v0=v0)
        order = np.argsort(-s)
        s = s[order]
        vt = vt[order]
    else:
        _, s, vt = np.linalg.svd(np.asarray(x.todense(), dtype=np.float64), full_matrices=False)
        s = s[:factors]
        vt = vt[:factors]
    keep = s > (s[0] * 1e-12 if len(s) and s[0] > 0 else 0)
    s = s[keep]
    vt = vt[keep]
    if len(s) == 0:
        raise TrainingError("interaction matrix has rank zero")
    if len(s) < factors:
        log.info("puresvd: effective rank %d < requested %d factors", len(s), factors)
    v = vt.T.copy()
    # deterministic sign convention: largest-magnitude entry positive
    flip = v[np.abs(v).argmax(axis=0), np.arange(v.shape[1])] < 0
    v[:, flip] *= -1.0
    return PureSvdModel(v=v, factors=int(factors), singular_values=s)


def train_itemknn(matrix: InteractionMatrix, neighbors: int) -> ItemKnnModel:
    """Cosine similarities between item columns, top-k truncated per column.

    Zero-norm items have similarity 0 with everything; self-similarities are
    removed before truncation; ties at the cut are broken by ascending id.
    """
    if neighbors < 1:
        raise ValueError(f"neighbors must be >= 1, got {neighbors}")
    x = matrix.csr.tocsc()
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=0)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    xn = x @ sp.diags(inv)
    sim = (xn.T @ xn).tocsc()
    sim.setdiag(0.0)
    sim.eliminate_zeros()
    sim.data = np.clip(sim.data, -1.0, 1.0)

    data, indices, indptr = [], [], [0]
    for j in range(sim.shape[1]):
        lo, hi = sim.indptr[j], sim.indptr[j + 1]
        rows = sim.indices[lo:hi]
        vals = sim.data[lo:hi]
        if len(rows) > neighbors:
            keep = np.lexsort((rows, -vals))[:neighbors]
            keep.sort()
            rows = rows[keep]
            vals = vals[keep]
        indices.append(rows)
        data.append(vals)
        indptr.append(indptr[-1] + len(rows))
    truncated = sp.csc_matrix(
        (
            np.concatenate(data) if data else np.empty(0),
            np.concatenate(indices) if indices else np.empty(0, dtype=np.int32),
            np.asarray(indptr),
        ),
        shape=sim.shape,
    )
    return ItemKnnModel(sim=truncated, neighbors=int(neighbors))


def train_popularity(matrix: InteractionMatrix) -> PopularityModel:
    return PopularityModel(counts=np.asarray(matrix.csr.sum(axis=0)).ravel())


TRAINERS = {
    "ease": train_ease,
    "puresvd": train_puresvd,
    "itemknn": train_itemknn,
    "popularity": train_popularity,
}

_MODEL_CLASSES = {
    cls.kind: cls for cls in (EaseModel, PureSvdModel, ItemKnnModel, PopularityModel)
}


def register_model(kind: str, trainer, default_grid: dict, model_class=None) -> None:
    """Plug in an external model kind for training, tuning and the scans."""
    TRAINERS[kind] = trainer
    DEFAULT_GRIDS[kind] = default_grid
    if model_class is not None:
        _MODEL_CLASSES[kind] = model_class


def train_model(kind: str, matrix: InteractionMatrix, params: dict) -> Recommender:
    if kind not in TRAINERS:
        raise ValueError(f"unknown model kind {kind!r}; known: {sorted(TRAINERS)}")
    return TRAINERS[kind](matrix, **params)


def load_model(path) -> Recommender:
    """Load a model saved with :meth:`Recommender.save` (dispatch on kind tag)."""
    with open(os.path.join(path, "header.json"), "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header["version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {header['version']}")
    kind = header["kind"]
    params = header["params"]

    def arr(name):
        return np.load(os.path.join(path, f"{name}.npy"))

    if kind == "ease":
        return EaseModel(b=arr("b"), lam=params["lam"])
    if kind == "puresvd":
        return PureSvdModel(
            v=arr("v"), factors=params["factors"], singular_values=arr("singular_values")
        )
    if kind == "itemknn":
        sim = sp.csc_matrix(
            (arr("sim_data"), arr("sim_indices"), arr("sim_indptr")),
            shape=tuple(arr("sim_shape")),
        )
        return ItemKnnModel(sim=sim, neighbors=params["neighbors"])
    if kind == "popularity":
        return PopularityModel(counts=arr("counts"))
    raise ValueError(f"cannot load model kind {kind!r}")


def recommend_topk(model: Recommender, history, k: int, filter_seen: bool) -> np.ndarray:
    """Ranked top-k item ids: descending score, ascending id on ties.

    With ``filter_seen`` the history items are removed from the candidate
    set before ranking; the list is shorter than ``k`` when fewer candidates
    remain.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = np.array(model.score(history), dtype=np.float64)
    if filter_seen and len(np.asarray(history)) > 0:
        scores[np.unique(np.asarray(history, dtype=np.int64))] = ranking.NEG_INF
    return ranking.topk(scores, k)


def validation_ndcg(model: Recommender, validation, k: int = 10, filter_seen: bool = True) -> float:
    """Mean NDCG@k of the single-target validation pairs under ``model``."""
    if not validation:
        raise ValueError("validation set is empty")
    total = 0.0
    for pair in validation:
        scores = np.array(model.score(pair.input_items), dtype=np.float64)
        if filter_seen and len(pair.input_items) > 0:
            scores[np.unique(pair.input_items)] = ranking.NEG_INF
        rank = ranking.rank_of(scores, pair.target_item)
        if rank <= k:
            total += 1.0 / np.log2(rank + 1.0)
    return total / len(validation)


class TuningResult:
    """Outcome of a random grid search: chosen point, its score, all trials."""

    def __init__(self, kind, chosen, best_value, trials, budget):
        self.kind = kind
        self.chosen = chosen
        self.best_value = best_value
        self.trials = trials
        self.budget = budget

    def to_dict(self):
        return {
            "kind": self.kind,
            "chosen": self.chosen,
            "best_value": self.best_value,
            "budget": self.budget,
            "trials": [
                {"params": p, "value": v, "error": e} for (p, v, e) in self.trials
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            chosen=d["chosen"],
            best_value=d["best_value"],
            trials=[(t["params"], t["value"], t["error"]) for t in d["trials"]],
            budget=d["budget"],
        )


def grid_points(grid: dict) -> list[dict]:
    """Expand a name -> values grid into the full list of parameter dicts."""
    if not grid:
        return [{}]
    names = sorted(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def tune_random_search(
    kind: str,
    matrix: InteractionMatrix,
    validation,
    grid: dict | None = None,
    budget: int = 20,
    seed: int = 0,
    k: int = 10,
    filter_seen: bool = True,
    trainer=None,
) -> TuningResult:
    """Sample ``budget`` grid points without replacement, pick the best validation NDCG@k.

    Exhaustive when the grid is smaller than the budget. Individual trial
    failures are recorded and skipped; if every trial fails the whole search
    raises :class:`TuningError`.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    trainer = trainer or TRAINERS.get(kind)
    if trainer is None:
        raise ValueError(f"unknown model kind {kind!r}")
    points = grid_points(DEFAULT_GRIDS.get(kind, {}) if grid is None else grid)
    rng = np.random.default_rng(seed)
    n_trials = min(budget, len(points))
    chosen_idx = rng.choice(len(points), size=n_trials, replace=False)

    trials = []
    best = None
    for idx in chosen_idx:
        params = points[int(idx)]
        try:
            model = trainer(matrix, **params)
            value = validation_ndcg(model, validation, k=k, filter_seen=filter_seen)
        except Exception as exc:  # keep searching; report per-trial diagnostics
            log.warning("tuning trial %s failed: %s", params, exc)
            trials.append((params, None, f"{type(exc).__name__}: {exc}"))
            continue
        trials.append((params, float(value), None))
        if best is None or value > best[1]:
            best = (params, float(value))
    if best is None:
        raise TuningError("all tuning trials failed", trials=trials)
    return TuningResult(kind=kind, chosen=best[0], best_value=best[1], trials=trials, budget=budget)
