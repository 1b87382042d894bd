"""Benchmark the compiled ranking kernels against the numpy fallback.

Run after an editable install:

    python benchmarks/bench_ranking.py

The shapes mimic scan workloads: a few thousand evaluation steps ranked
against catalogs of a few thousand items.
"""

import time

import numpy as np

from coldwarm import _ranking_py

try:
    from coldwarm import _ranking_cy
except ImportError:
    _ranking_cy = None


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("rank 2000x3706", "rank_rows", 2000, 3706, None),
        ("rank 500x25000", "rank_rows", 500, 25000, None),
        ("topk@10 2000x3706", "topk_rows", 2000, 3706, 10),
        ("topk@100 2000x3706", "topk_rows", 2000, 3706, 100),
        ("topk@10 500x25000", "topk_rows", 500, 25000, 10),
    ]
    print(f"{'case':<22} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for name, kind, m, n, k in cases:
        scores = rng.standard_normal((m, n))
        scores[rng.random((m, n)) < 0.02] = -np.inf  # a few excluded entries
        if kind == "rank_rows":
            targets = rng.integers(0, n, size=m)
            scores[np.arange(m), targets] = rng.standard_normal(m)  # keep targets finite
            args_py = (scores, targets)
            args_cy = (np.ascontiguousarray(scores), np.ascontiguousarray(targets))
            fn_py = _ranking_py.rank_rows
            fn_cy = _ranking_cy.rank_rows if _ranking_cy else None
        else:
            args_py = (scores, k)
            args_cy = (np.ascontiguousarray(scores), k)
            fn_py = _ranking_py.topk_rows
            fn_cy = _ranking_cy.topk_rows if _ranking_cy else None

        t_py = timeit(fn_py, *args_py)
        if fn_cy is None:
            print(f"{name:<22} {t_py * 1e3:9.1f}ms {'n/a':>10} {'n/a':>8}")
            continue
        t_cy = timeit(fn_cy, *args_cy)
        out_py = fn_py(*args_py)
        out_cy = fn_cy(*args_cy)
        if kind == "rank_rows":
            assert np.array_equal(out_py, np.asarray(out_cy)), "backend mismatch"
        else:
            assert np.array_equal(out_py[0], np.asarray(out_cy[0])), "backend mismatch"
        print(f"{name:<22} {t_py * 1e3:9.1f}ms {t_cy * 1e3:9.1f}ms {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
