import json

import numpy as np
import pytest

from coldwarm import (
    build_item_scan_split,
    build_matrix,
    hr_star,
    ndcg_star,
    split_global_timepoint,
    successive_evaluate_item,
)
from coldwarm.errors import ScanAbortError
from coldwarm.itemscan import (
    ItemScanConfig,
    aggregate_records,
    run_item_scan,
    sample_probe_items,
    scan_single_item,
    stability_audit,
)
from coldwarm.models import PopularityModel, register_model, train_model
from coldwarm.splitting import TestUserRecord

from conftest import make_log, random_log
from planted import K_DRIVE, planted_case


def record(user, input_items, holdout_items):
    input_items = np.asarray(input_items, dtype=np.int64)
    holdout_items = np.asarray(holdout_items, dtype=np.int64)
    return TestUserRecord(
        user_id=user,
        input_items=input_items,
        input_ts=np.arange(len(input_items), dtype=np.int64),
        input_weights=np.ones(len(input_items)),
        holdout_items=holdout_items,
        holdout_ts=100 + np.arange(len(holdout_items), dtype=np.int64),
        holdout_weights=np.ones(len(holdout_items)),
    )


class FixedScores(PopularityModel):
    """Stub with a fixed score vector, independent of history."""

    kind = "fixed"


def test_sample_probe_items_full_catalog(rng):
    log = random_log(rng, n_items=8, n_events=100)
    items = sample_probe_items(log, 8, seed=0)
    assert sorted(items.tolist()) == sorted(np.unique(log.items).tolist())


def test_sample_probe_items_deterministic(rng):
    log = random_log(rng, n_items=10, n_events=100)
    a = sample_probe_items(log, 4, seed=11)
    b = sample_probe_items(log, 4, seed=11)
    assert a.tolist() == b.tolist()


def test_sample_probe_items_clamps_with_warning(rng):
    log = random_log(rng, n_items=5, n_events=50)
    with pytest.warns(UserWarning):
        items = sample_probe_items(log, 50, seed=0)
    assert len(items) == len(np.unique(log.items))


def test_sample_probe_items_pair_frequencies():
    log = make_log([(f"u{j}", f"i{j % 5}", j + 1) for j in range(25)])
    counts = {}
    reps = 10_000
    for seed in range(reps):
        pair = tuple(sorted(sample_probe_items(log, 2, seed=seed).tolist()))
        counts[pair] = counts.get(pair, 0) + 1
    assert len(counts) == 10
    for c in counts.values():
        assert abs(c / reps - 0.1) < 0.02


def test_successive_units_per_holdout():
    model = FixedScores(counts=np.arange(6, dtype=float))
    users = [record(0, [0, 1], [2, 3, 4]), record(1, [1], [5])]
    outcome = successive_evaluate_item(model, 5, [record(0, [0, 1], [2, 3, 4])],
                                       k_list=[3], filter_seen=False)
    assert outcome.n_units == 3
    assert len(outcome.units) == 3
    outcome = successive_evaluate_item(model, 0, users[1:], k_list=[3], filter_seen=False)
    assert outcome.n_units == 1


def test_successive_probe_scored_max_gives_hr_one():
    counts = np.zeros(6)
    counts[4] = 10.0
    model = FixedScores(counts=counts)
    users = [record(0, [0], [1, 2]), record(1, [1], [3])]
    outcome = successive_evaluate_item(model, 4, users, k_list=[1, 3], filter_seen=False)
    assert outcome.hr == {1: 1.0, 3: 1.0}
    assert outcome.ndcg == {1: 1.0, 3: 1.0}


def test_successive_matches_metric_oracle_on_units():
    rng = np.random.default_rng(3)
    model = FixedScores(counts=rng.random(12))
    users = [record(u, rng.integers(0, 12, size=3), rng.integers(0, 12, size=int(rng.integers(1, 4))))
             for u in range(6)]
    probe = 7
    users = [
        record(
            r.user_id,
            [i for i in r.input_items if i != probe],
            [i for i in r.holdout_items if i != probe],
        )
        for r in users
    ]
    users = [r for r in users if len(r.holdout_items)]
    outcome = successive_evaluate_item(model, probe, users, k_list=[2, 5], filter_seen=True)
    for k in (2, 5):
        assert outcome.hr[k] == hr_star(probe, outcome.units, k)
        assert outcome.ndcg[k] == pytest.approx(ndcg_star(probe, outcome.units, k), abs=1e-12)


def test_successive_rejects_unscrubbed_probe():
    model = FixedScores(counts=np.zeros(4))
    with pytest.raises(ValueError):
        successive_evaluate_item(model, 2, [record(0, [2], [3])], k_list=[1], filter_seen=False)


def test_successive_skips_fully_empty_users_with_counter():
    model = FixedScores(counts=np.zeros(4))
    users = [record(0, [], []), record(1, [0], [1])]
    outcome = successive_evaluate_item(model, 3, users, k_list=[2], filter_seen=False)
    assert outcome.skipped_users == 1
    assert outcome.n_units == 1


def test_successive_filter_seen_masks_growing_history():
    # catalog 0..3; probe = 3 scored just below item 0; history grows over 0
    counts = np.array([5.0, 0.0, 0.0, 4.0])
    model = FixedScores(counts=counts)
    # step 0: history {1}, top-2 = [0, 3] -> probe rank 2
    # step 1: history {1, 0} with 0 masked -> top-2 = [3, 2]? counts: 3 -> 4 wins
    outcome = successive_evaluate_item(
        model, 3, [record(0, [1], [0, 2])], k_list=[1], filter_seen=True
    )
    assert outcome.n_units == 2
    # at step 1 item 0 is consumed and masked, so the probe tops the list
    assert outcome.hr[1] == pytest.approx(0.5)


def full_train_split():
    events = [("a", "x", 1), ("a", "y", 2), ("b", "x", 2), ("b", "z", 3),
              ("c", "y", 3), ("c", "z", 4), ("t", "x", 3), ("t", "y", 9), ("t", "z", 10)]
    log = make_log(events)
    return log, split_global_timepoint(log, q=0.7, val_fraction=0.0, seed=0)


def test_scan_full_pool_equals_untouched_training():
    log, split = full_train_split()
    probe = log.item_index()["x"]
    iss = build_item_scan_split(split, probe)
    config = ItemScanConfig(
        model_kind="popularity", model_params={}, n_grid=(iss.pool_size,),
        s_items=1, k_list=(1, 2), base_seed=5, filter_seen=False, n_boot=50,
    )
    result = run_item_scan(config, split, probe_items=[probe])
    model = train_model("popularity", build_matrix(split.train), {})
    expected = successive_evaluate_item(model, probe, iss.eval_users, (1, 2), False)
    by_k = {r.k: r for r in result.records}
    for k in (1, 2):
        assert by_k[k].hr_star == expected.hr[k]
        assert by_k[k].ndcg_star == expected.ndcg[k]
        assert by_k[k].n_units == expected.n_units


def test_planted_threshold_step_curve():
    _, split, config, probe_ids, n_grid = planted_case(t_true=8)
    result = run_item_scan(config, split, probe_items=probe_ids)
    curve = {
        p.n: p.mean for p in result.points if p.metric == "hr_star" and p.k == K_DRIVE
    }
    assert sorted(curve) == list(n_grid)
    for n, value in curve.items():
        assert value == (1.0 if n >= 8 else 0.0)
    # K=5 never admits the probe: flat zero curve
    assert all(
        p.mean == 0.0 for p in result.points if p.metric == "hr_star" and p.k == 5
    )
    assert not result.failures
    assert not result.skipped["tasks"]


def test_scan_records_independent_of_workers_and_order():
    _, split, config, probe_ids, _ = planted_case(t_true=8)
    seq = run_item_scan(config, split, probe_items=probe_ids)
    par = run_item_scan(config, split, workers=2, probe_items=probe_ids)
    rev = run_item_scan(config, split, probe_items=probe_ids[::-1].copy())
    assert seq.records == par.records == rev.records
    assert seq.points == par.points == rev.points


def test_scan_resumes_from_run_log(tmp_path):
    _, split, config, probe_ids, _ = planted_case(t_true=8)
    log_path = tmp_path / "run.jsonl"
    full = run_item_scan(config, split, run_log_path=str(log_path), probe_items=probe_ids)
    lines = log_path.read_text().strip().splitlines()
    # drop the second half of the log and resume
    log_path.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    resumed = run_item_scan(config, split, run_log_path=str(log_path), probe_items=probe_ids)
    assert resumed.points == full.points
    assert sorted((r.item, r.n, r.k) for r in resumed.records) == sorted(
        (r.item, r.n, r.k) for r in full.records
    )


def test_scan_skips_cells_beyond_pool_and_aggregates_eligible_only():
    log, split = full_train_split()
    probe = log.item_index()["x"]  # pool of 2
    config = ItemScanConfig(
        model_kind="popularity", model_params={}, n_grid=(1, 2, 3),
        s_items=1, k_list=(2,), base_seed=0, filter_seen=False, n_boot=50,
    )
    result = run_item_scan(config, split, probe_items=[probe])
    assert (probe, 3) in result.skipped["tasks"]
    assert {r.n for r in result.records} == {1, 2}
    assert all(p.n in (1, 2) for p in result.points)


def test_aggregation_excludes_small_pools():
    config = ItemScanConfig(model_kind="popularity", model_params={}, n_grid=(1, 2),
                            s_items=2, k_list=(1,), base_seed=0, n_boot=50)
    from coldwarm.itemscan import ItemRecord

    records = [
        ItemRecord(item=1, item_key="a", pool=5, n=2, k=1, hr_star=1.0, ndcg_star=1.0,
                   n_units=4, seed=0),
        ItemRecord(item=2, item_key="b", pool=1, n=2, k=1, hr_star=0.0, ndcg_star=0.0,
                   n_units=4, seed=0),
    ]
    points = aggregate_records(records, config)
    hr_point = next(p for p in points if p.metric == "hr_star")
    assert hr_point.n_entities == 1  # pool-1 item is not eligible at N=2
    assert hr_point.mean == 1.0


def _count_failing_trainer():
    calls = {"n": 0}

    def trainer(matrix, **params):
        calls["n"] += 1
        raise RuntimeError("synthetic failure")

    return trainer


def test_scan_aborts_when_failures_exceed_limit():
    register_model("always_fails_scan", _count_failing_trainer(), {})
    log, split = full_train_split()
    probe = log.item_index()["x"]
    config = ItemScanConfig(
        model_kind="always_fails_scan", model_params={}, n_grid=(1, 2),
        s_items=1, k_list=(1,), base_seed=0, n_boot=50, max_failure_rate=0.1,
    )
    with pytest.raises(ScanAbortError):
        run_item_scan(config, split, probe_items=[probe])


def test_scan_records_failures_and_continues_when_allowed():
    register_model("always_fails_scan2", _count_failing_trainer(), {})
    log, split = full_train_split()
    probe = log.item_index()["x"]
    config = ItemScanConfig(
        model_kind="always_fails_scan2", model_params={}, n_grid=(1, 2),
        s_items=1, k_list=(1,), base_seed=0, n_boot=50, max_failure_rate=1.0,
    )
    result = run_item_scan(config, split, probe_items=[probe])
    assert len(result.failures) == 2
    assert result.records == []
    assert "synthetic failure" in result.failures[0]["error"]


def test_run_log_contains_replay_seeds(tmp_path):
    log, split = full_train_split()
    probe = log.item_index()["x"]
    config = ItemScanConfig(
        model_kind="popularity", model_params={}, n_grid=(1, 2), s_items=1,
        k_list=(1,), base_seed=9, filter_seen=False, n_boot=50,
    )
    path = tmp_path / "scan.jsonl"
    run_item_scan(config, split, run_log_path=str(path), probe_items=[probe])
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    from coldwarm.seeding import derive_seed

    for rec in recs:
        if rec["type"] == "result":
            assert rec["seed"] == derive_seed(9, rec["item"], rec["n"])


def test_stability_audit_popularity_is_fully_stable():
    _, split, config, probe_ids, _ = planted_case(t_true=8)
    value = stability_audit(config, split, int(probe_ids[0]), n=4,
                            seed_a=1, seed_b=2, k=K_DRIVE)
    assert value == 1.0


def test_scan_single_item_matches_run(tmp_path):
    _, split, config, probe_ids, n_grid = planted_case(t_true=8)
    records, skips, failures = scan_single_item(config, split, int(probe_ids[0]), n_grid)
    assert not skips and not failures
    full = run_item_scan(config, split, probe_items=probe_ids)
    subset = [r for r in full.records if r.item == int(probe_ids[0])]
    assert records == subset
