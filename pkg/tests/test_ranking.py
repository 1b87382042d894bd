import numpy as np
import pytest

from coldwarm import _ranking_py, ranking

from oracles import rank_oracle, topk_oracle

try:
    from coldwarm import _ranking_cy
except ImportError:
    _ranking_cy = None

BACKENDS = [_ranking_py] + ([_ranking_cy] if _ranking_cy else [])


def random_scores(rng, m, n, excluded_frac=0.1):
    scores = rng.standard_normal((m, n))
    # force plenty of exact ties
    scores[rng.random((m, n)) < 0.3] = 0.5
    scores[rng.random((m, n)) < excluded_frac] = -np.inf
    return scores


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit("_", 1)[-1])
def test_rank_rows_matches_oracle(backend, rng):
    scores = random_scores(rng, 40, 30)
    targets = rng.integers(0, 30, size=40)
    got = np.asarray(
        backend.rank_rows(np.ascontiguousarray(scores), np.ascontiguousarray(targets, dtype=np.int64))
    )
    for r in range(40):
        assert got[r] == rank_oracle(scores[r], int(targets[r]))


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit("_", 1)[-1])
@pytest.mark.parametrize("k", [1, 3, 10, 29, 30, 64])
def test_topk_rows_matches_oracle(backend, k, rng):
    scores = random_scores(rng, 25, 30)
    idx, lengths = backend.topk_rows(np.ascontiguousarray(scores), k)
    idx = np.asarray(idx)
    lengths = np.asarray(lengths)
    for r in range(25):
        expected = topk_oracle(scores[r], k)
        assert lengths[r] == len(expected)
        assert idx[r, : lengths[r]].tolist() == expected
        assert (idx[r, lengths[r] :] == -1).all()


@pytest.mark.skipif(_ranking_cy is None, reason="compiled backend not built")
def test_backends_agree_bitwise(rng):
    for _ in range(20):
        m = int(rng.integers(1, 30))
        n = int(rng.integers(2, 60))
        scores = np.ascontiguousarray(random_scores(rng, m, n))
        targets = np.ascontiguousarray(rng.integers(0, n, size=m), dtype=np.int64)
        assert np.array_equal(
            np.asarray(_ranking_py.rank_rows(scores, targets)),
            np.asarray(_ranking_cy.rank_rows(scores, targets)),
        )
        k = int(rng.integers(1, n + 3))
        ip, lp = _ranking_py.topk_rows(scores, k)
        ic, lc = _ranking_cy.topk_rows(scores, k)
        assert np.array_equal(np.asarray(ip), np.asarray(ic))
        assert np.array_equal(np.asarray(lp), np.asarray(lc))


def test_tie_break_is_ascending_id():
    assert ranking.topk(np.zeros(5), 3).tolist() == [0, 1, 2]


def test_all_excluded_row():
    scores = np.full((1, 4), -np.inf)
    idx, lengths = ranking.topk_rows(scores, 2)
    assert lengths[0] == 0
    assert (idx[0] == -1).all()
    assert ranking.rank_rows(scores, np.array([2]))[0] == 5


def test_rank_of_scalar_interface():
    assert ranking.rank_of(np.array([3.0, 1.0, 2.0]), 2) == 2


def test_signed_zero_ties():
    scores = np.array([0.0, -0.0, 0.0])
    assert ranking.topk(scores, 3).tolist() == [0, 1, 2]
    assert ranking.rank_of(scores, 1) == 2
