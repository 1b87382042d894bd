"""Command-line front end for the full pipeline.

Subcommands: stats, split, tune, scan-items, scan-users, detect, plot-data.
Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 scan aborted by the failure-rate limit.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, apply_overrides, load_config
from .data import build_matrix, compute_stats, ingest_log, pcore_filter, write_stats_csv
from .errors import ColdwarmError, ConfigError, DataError, ScanAbortError
from .itemscan import ItemScanConfig, run_item_scan
from .metrics import CurveRow, points_to_rows, read_curves, write_curves
from .models import (
    DEFAULT_GRIDS,
    TuningResult,
    load_model,
    train_model,
    tune_random_search,
)
from .splitting import (
    build_user_scan_split,
    export_split,
    load_split,
    split_global_timepoint,
)
from .threshold import Curve, ThresholdReport, bootstrap_threshold_ci, detect_threshold
from .userscan import UserScanConfig, run_user_scan

log = logging.getLogger("coldwarm")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SCAN_FAILURES = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_dataset(cfg: RunConfig):
    if not cfg.dataset.path:
        raise ConfigError("dataset.path is not set")
    schema = cfg.dataset.schema()
    try:
        loaded = ingest_log(cfg.dataset.path, schema, on_malformed=cfg.dataset.on_malformed)
    except OSError as exc:
        raise DataError(f"cannot read {cfg.dataset.path}: {exc}") from exc
    if loaded.skipped_rows:
        log.info("skipped %d malformed rows", loaded.skipped_rows)
    if cfg.dataset.pcore > 0:
        loaded = pcore_filter(loaded, cfg.dataset.pcore)
    return loaded


def _split_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.resolved_output_dir(), "split")


def _get_split(cfg: RunConfig, data=None):
    data = data if data is not None else _load_dataset(cfg)
    split_dir = _split_dir(cfg)
    if os.path.exists(os.path.join(split_dir, "manifest.json")):
        log.info("loading existing split from %s", split_dir)
        return data, load_split(split_dir, data)
    split = split_global_timepoint(
        data, q=cfg.split.q, val_fraction=cfg.split.val_fraction, seed=cfg.split.seed
    )
    os.makedirs(split_dir, exist_ok=True)
    export_split(split, split_dir)
    return data, split


def _tuning_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.resolved_output_dir(), f"tuning_{cfg.model.kind}.json")


def _model_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.resolved_output_dir(), f"model_{cfg.model.kind}")


def _get_tuned_params(cfg: RunConfig, split) -> dict:
    """Fixed params from the config, a previous tuning run, or a fresh search."""
    if cfg.model.params:
        return dict(cfg.model.params)
    path = _tuning_path(cfg)
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return TuningResult.from_dict(json.load(fh)).chosen
    result = _run_tuning(cfg, split)
    return result.chosen


def _run_tuning(cfg: RunConfig, split) -> TuningResult:
    matrix = build_matrix(split.train, mode=cfg.model.matrix_mode)
    grid = cfg.model.grid or None
    result = tune_random_search(
        cfg.model.kind, matrix, split.validation, grid=grid,
        budget=cfg.tuning.budget, seed=cfg.tuning.seed, k=cfg.tuning.k,
        filter_seen=cfg.filter_seen,
    )
    os.makedirs(cfg.resolved_output_dir(), exist_ok=True)
    with open(_tuning_path(cfg), "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("tuned %s: %s (validation NDCG@%d = %.4f)",
             cfg.model.kind, result.chosen, cfg.tuning.k, result.best_value)
    return result


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def cmd_stats(cfg: RunConfig, args) -> int:
    data = _load_dataset(cfg)
    stats = compute_stats(data)
    out = args.output or os.path.join(cfg.resolved_output_dir(), "stats.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_stats_csv(stats, out)
    print(
        f"users={stats.n_users} items={stats.n_items} interactions={stats.n_interactions} "
        f"density={stats.density:.4%} avg_user={stats.avg_user_interactions:.1f} "
        f"avg_item={stats.avg_item_interactions:.1f}"
    )
    print(f"wrote {out}")
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    _, split = _get_split(cfg)
    print(
        f"gt={split.gt} train_events={len(split.train)} "
        f"validation_pairs={len(split.validation)} test_users={len(split.test)} "
        f"dropped_validation_users={split.dropped_validation_users} "
        f"empty_input_test_users={split.empty_input_test_users}"
    )
    print(f"wrote {_split_dir(cfg)}")
    return EXIT_OK


def cmd_tune(cfg: RunConfig, args) -> int:
    _, split = _get_split(cfg)
    result = _run_tuning(cfg, split)
    matrix = build_matrix(split.train, mode=cfg.model.matrix_mode)
    model = train_model(cfg.model.kind, matrix, result.chosen)
    model.save(_model_dir(cfg))
    print(f"chosen={result.chosen} validation_ndcg@{cfg.tuning.k}={result.best_value:.4f}")
    print(f"wrote {_tuning_path(cfg)} and {_model_dir(cfg)}")
    return EXIT_OK


def cmd_scan_items(cfg: RunConfig, args) -> int:
    _, split = _get_split(cfg)
    params = _get_tuned_params(cfg, split)
    scan_cfg = ItemScanConfig(
        model_kind=cfg.model.kind, model_params=params,
        n_grid=tuple(cfg.item_scan.n_grid), s_items=cfg.item_scan.s_items,
        k_list=tuple(cfg.item_scan.k_list), base_seed=cfg.item_scan.seed,
        filter_seen=cfg.filter_seen, matrix_mode=cfg.model.matrix_mode,
        n_boot=cfg.n_boot,
    )
    out_dir = cfg.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    run_log = os.path.join(out_dir, f"itemscan_{cfg.model.kind}.jsonl")
    result = run_item_scan(scan_cfg, split, workers=_workers(cfg), run_log_path=run_log)
    curves_path = os.path.join(out_dir, f"curves_item_{cfg.model.kind}.csv")
    write_curves(points_to_rows(result.points, setup="item", model=cfg.model.kind), curves_path)
    print(
        f"scanned {len(result.probe_items)} items: {len(result.records)} records, "
        f"{len(result.skipped['tasks'])} skipped cells, {len(result.failures)} failures"
    )
    if args.stability_audit:
        audits = _emit_stability_audit(cfg, scan_cfg, split, result)
        for (item, n), value in audits:
            print(f"stability@10 item={item} N={n}: {value:.4f}")
    print(f"wrote {run_log} and {curves_path}")
    return EXIT_OK


def _emit_stability_audit(cfg, scan_cfg, split, result, n_probes=3):
    """Re-train a few (item, N) cells under two sampling seeds and report overlap."""
    from .itemscan import stability_audit

    audits = []
    pools = {r.item: r.pool for r in result.records}
    candidates = sorted(item for item, pool in pools.items() if pool >= 2)
    for item in candidates[:n_probes]:
        n = max(n for n in scan_cfg.n_grid if n <= pools[item])
        value = stability_audit(
            scan_cfg, split, item, n=n,
            seed_a=scan_cfg.base_seed + 1, seed_b=scan_cfg.base_seed + 2, k=10,
        )
        audits.append(((item, n), value))
    path = os.path.join(cfg.resolved_output_dir(), f"stability_{cfg.model.kind}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            [{"item": item, "n": n, "stability_at_10": v} for (item, n), v in audits],
            fh, indent=2,
        )
        fh.write("\n")
    return audits


def cmd_scan_users(cfg: RunConfig, args) -> int:
    _, split = _get_split(cfg)
    model_dir = _model_dir(cfg)
    if os.path.exists(os.path.join(model_dir, "header.json")):
        model = load_model(model_dir)
    else:
        params = _get_tuned_params(cfg, split)
        matrix = build_matrix(split.train, mode=cfg.model.matrix_mode)
        model = train_model(cfg.model.kind, matrix, params)
        model.save(model_dir)
    uscan = build_user_scan_split(split)
    scan_cfg = UserScanConfig(
        n_grid=tuple(cfg.user_scan.n_grid), k_list=tuple(cfg.user_scan.k_list),
        base_seed=cfg.user_scan.seed, filter_seen=cfg.filter_seen, n_boot=cfg.n_boot,
    )
    out_dir = cfg.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    run_log = os.path.join(out_dir, f"userscan_{cfg.model.kind}.jsonl")
    result = run_user_scan(scan_cfg, uscan, model, run_log_path=run_log)
    curves_path = os.path.join(out_dir, f"curves_user_{cfg.model.kind}.csv")
    write_curves(points_to_rows(result.points, setup="user", model=cfg.model.kind), curves_path)
    print(f"scanned {len(uscan.records)} users: {len(result.records)} records, "
          f"omitted N values: {result.omitted_ns or 'none'}")
    print(f"wrote {run_log} and {curves_path}")
    return EXIT_OK


def _driving_metric(cfg: RunConfig, setup: str) -> tuple[str, int]:
    metric = cfg.detect.metric or ("ndcg_star" if setup == "item" else "ndcg")
    return metric, cfg.detect.k


def _entity_values_from_runlog(path, setup: str, metric: str, k: int) -> dict:
    """Per-N entity value lists for the bootstrap, read from a scan run log."""
    per_n: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") != "result" or rec.get("k") != k:
                continue
            if setup == "item":
                if rec["pool"] < rec["n"]:
                    continue
                value = rec["hr_star"] if metric == "hr_star" else rec["ndcg_star"]
            else:
                value = rec["hr"] if metric == "hr" else rec["ndcg"]
            per_n.setdefault(rec["n"], []).append(value)
    return per_n


def cmd_detect(cfg: RunConfig, args) -> int:
    setup = args.setup
    out_dir = cfg.resolved_output_dir()
    curves_path = args.curves or os.path.join(out_dir, f"curves_{setup}_{cfg.model.kind}.csv")
    rows = [r for r in read_curves(curves_path) if r.setup == setup]
    if not rows:
        raise DataError(f"{curves_path} has no rows for setup {setup!r}")
    metric, k = _driving_metric(cfg, setup)
    rows = [r for r in rows if r.metric == metric and r.k == k]
    if not rows:
        raise DataError(f"{curves_path} has no rows for metric {metric}@{k}")
    rows.sort(key=lambda r: r.n)
    curve = Curve(ns=[r.n for r in rows], values=[r.mean for r in rows])
    report = detect_threshold(curve, w=cfg.detect.window)

    run_log = args.runlog
    if run_log is None:
        candidate = os.path.join(
            out_dir, f"{'itemscan' if setup == 'item' else 'userscan'}_{cfg.model.kind}.jsonl"
        )
        run_log = candidate if os.path.exists(candidate) else ""
    ci = None
    if run_log and report.threshold_n is not None:
        per_entity = _entity_values_from_runlog(run_log, setup, metric, k)
        per_entity = {n: v for n, v in per_entity.items() if len(v) >= 2 and n in set(curve.ns.tolist())}
        if len(per_entity) >= cfg.detect.window:
            ci = bootstrap_threshold_ci(
                per_entity, w=cfg.detect.window, n_boot=cfg.detect.n_boot,
                level=cfg.detect.level, seed=cfg.detect.seed,
            )
            report = ThresholdReport(
                threshold_n=report.threshold_n, window=report.window, slope=report.slope,
                ci=ci, contrast_flag=report.contrast_flag, flag_reason=report.flag_reason,
            )

    payload = {
        "dataset": cfg.dataset.path,
        "setup": setup,
        "model": cfg.model.kind,
        "metric": f"{metric}@{k}",
        **report.to_dict(),
    }
    out = args.output or os.path.join(out_dir, f"report_{setup}_{cfg.model.kind}.json")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if report.threshold_n is None:
        print(f"{setup}/{cfg.model.kind}: no positive shift detected ({metric}@{k})")
    else:
        ci_text = f" ci=({report.ci[0]:.1f},{report.ci[1]:.1f})" if report.ci else ""
        flag = f" [{report.flag_reason}]" if report.contrast_flag else ""
        print(
            f"{setup}/{cfg.model.kind}: threshold={report.threshold_n}{ci_text} "
            f"window={report.window} slope={report.slope:.4g} metric={metric}@{k}{flag}"
        )
    print(f"wrote {out}")
    return EXIT_OK


def cmd_plot_data(cfg: RunConfig, args) -> int:
    rows = read_curves(args.curves)
    if not rows:
        raise DataError(f"{args.curves} is empty")
    out = args.output or os.path.join(cfg.resolved_output_dir(), "plotdata.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["series", "setup", "model", "metric", "K", "N",
             "value", "ci_low", "ci_high", "n_entities"]
        )
        for r in sorted(rows, key=lambda r: (r.setup, r.model, r.metric, r.k, r.n)):
            series = f"{r.model}:{r.metric}@{r.k}"
            writer.writerow(
                [series, r.setup, r.model, r.metric, r.k, r.n,
                 repr(r.mean), repr(r.ci_low), repr(r.ci_high), r.n_entities]
            )
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="coldwarm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"coldwarm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", required=True, help="path to the YAML run config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (dotted path)")
        p.set_defaults(fn=fn)
        return p

    p = add("stats", cmd_stats, "dataset statistics CSV")
    p.add_argument("-o", "--output", default=None)

    add("split", cmd_split, "build and export the global-timepoint split")
    add("tune", cmd_tune, "random-search hyperparameters, save the tuned model")
    p = add("scan-items", cmd_scan_items, "run the item-based retraining scan")
    p.add_argument("--stability-audit", action="store_true",
                   help="re-train a few cells under two seeds and report top-10 overlap")
    add("scan-users", cmd_scan_users, "run the user-based inference scan")

    p = add("detect", cmd_detect, "detect the cold-warm threshold on a curve")
    p.add_argument("--setup", choices=["item", "user"], default="item")
    p.add_argument("--curves", default=None, help="curves CSV (default: from output dir)")
    p.add_argument("--runlog", default=None, help="scan run log for the bootstrap CI")
    p.add_argument("-o", "--output", default=None)

    p = add("plot-data", cmd_plot_data, "re-key a curves CSV for external plotting")
    p.add_argument("--curves", required=True)
    p.add_argument("-o", "--output", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = apply_overrides(load_config(args.config), args.overrides)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScanAbortError as exc:
        print(f"scan aborted: {exc}", file=sys.stderr)
        return EXIT_SCAN_FAILURES
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ColdwarmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
