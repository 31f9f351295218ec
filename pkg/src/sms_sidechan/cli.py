"""Command-line entry point: ``sms-sidechan <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error. Outputs
are written atomically and only after the work has succeeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .exceptions import SidechanError, TraceError
from .features import (
    build_signatures_report,
    feature_matrix,
    format_feature_csv,
    read_features,
    remove_outliers,
)
from .fileio import canonical_json, table_csv, write_atomic
from .learn import TUNING_GRID, grid_search
from .pipeline import (
    DistancePoint,
    ExperimentConfig,
    HierarchyPlan,
    Stage,
    distance_analysis,
    hierarchical_classify,
    load_vectors,
    pairwise_distance_study,
    prepare,
    run_experiment,
    spearman,
    temporal_stability,
    time_slice_analysis,
    train_model,
)
from .simulator import Countermeasure, Scenario, apply_countermeasure, shifted_in_time, simulate_campaign
from .trace import format_trace_csv, read_trace, summarize

logger = logging.getLogger("sms_sidechan")

SEED_ENV = "SMS_SIDECHAN_SEED"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers -----------------------------------------------------------------


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None


def _check_inputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise DataError(f"{p}: no such file")


def _check_outputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).resolve().parent.is_dir():
            raise DataError(f"{p}: output directory does not exist")


def _seed(args, fallback: int) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return fallback


def _load_trace(path):
    try:
        return read_trace(path)
    except TraceError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_features(path):
    try:
        return read_features(path)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _experiment(args, path=None) -> ExperimentConfig:
    path = path or args.config
    obj = _read_json(path) if path else {}
    try:
        cfg = ExperimentConfig.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    changes = {"seed": _seed(args, cfg.seed)}
    if getattr(args, "k", None) is not None:
        changes["k"] = args.k
    if getattr(args, "no_standardize", False):
        changes["standardize"] = False
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _vectors(args, cfg: ExperimentConfig):
    """Signatures from --features / --in, falling back to the config's source."""
    if getattr(args, "features", None):
        return _load_features(args.features)
    src = getattr(args, "input", None)
    if src:
        if src.endswith(".json"):
            return build_signatures_report(simulate_campaign(_scenario(src))).vectors
        text = Path(src).read_text(encoding="utf-8")
        if text.startswith("burst_id,seq,T_sent_ms"):
            return _load_features(src)
        return build_signatures_report(_load_trace(src)).vectors
    return load_vectors(cfg)


def _scenario(path) -> Scenario:
    try:
        return Scenario.from_json(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid scenario ({exc})") from None


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args):
    _check_inputs(args.config)
    _check_outputs(args.out)
    sc = _scenario(args.config)
    sc = replace(sc, seed=_seed(args, sc.seed))
    ds = simulate_campaign(sc)
    write_atomic(args.out, format_trace_csv(ds.records))
    logger.info("wrote %d records to %s", len(ds), args.out)


def cmd_features(args):
    _check_inputs(args.input)
    _check_outputs(args.out, args.report)
    res = build_signatures_report(_load_trace(args.input))
    vectors, removed = remove_outliers(res.vectors, args.outliers)
    write_atomic(args.out, format_feature_csv(vectors))
    if args.report:
        write_atomic(args.report, canonical_json({
            "signatures": len(vectors), "skipped": res.skipped,
            "skip_reasons": res.reasons, "outliers_removed": len(removed),
        }))
    logger.info("wrote %d signatures (%d skipped, %d outliers)", len(vectors), res.skipped, len(removed))


def cmd_summarize(args):
    _check_inputs(args.input)
    _check_outputs(args.out)
    text = canonical_json(summarize(_load_trace(args.input)))
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    _check_inputs(args.config, args.features, args.input)
    _check_outputs(args.out)
    cfg = _experiment(args)
    model = train_model(_vectors(args, cfg), cfg)
    write_atomic(args.out, canonical_json(model.to_dict()))


def cmd_evaluate(args):
    _check_inputs(args.config, args.features, args.input)
    _check_outputs(args.report, args.out)
    cfg = _experiment(args)
    report = run_experiment(cfg, _vectors(args, cfg))
    write_atomic(args.report, report.dumps())
    if args.out:
        rows = [[c, *row] for c, row in zip(report.classes, report.confusion)]
        write_atomic(args.out, table_csv(["true\\predicted", *report.classes], rows))
    print(f"mean accuracy {report.mean_accuracy:.4f}")


def _build_stage(name, stages, vectors, args, seen):
    if name in seen:
        raise DataError(f"hierarchy: stage {name!r} referenced twice")
    seen.add(name)
    spec = stages.get(name)
    if spec is None:
        raise DataError(f"hierarchy: unknown stage {name!r}")
    cfg = replace(ExperimentConfig.from_json(spec["experiment"]), seed=_seed(args, spec["experiment"].get("seed", 0)))
    children = {
        label: _build_stage(child, stages, vectors, args, seen)
        for label, child in spec.get("children", {}).items()
    }
    return Stage(name, train_model(vectors, cfg), children)


def cmd_hierarchy(args):
    _check_inputs(args.config, args.features, args.input, args.victim)
    _check_outputs(args.report)
    plan_obj = _read_json(args.config)
    vectors = _vectors(args, ExperimentConfig())
    plan = HierarchyPlan(_build_stage(plan_obj["root"], plan_obj["stages"], vectors, args, set()))
    victim = _load_features(args.victim)
    if not victim:
        raise DataError(f"{args.victim}: no signatures")
    batch = args.batch or len(victim)
    epochs = []
    for start in range(0, len(victim), batch):
        part = victim[start:start + batch]
        path = hierarchical_classify(plan, feature_matrix(part))
        epochs.append({
            "first_index": start,
            "n_signatures": len(part),
            "path": [d.__dict__ for d in path],
        })
    write_atomic(args.report, canonical_json({"epochs": epochs}))


def cmd_temporal(args):
    _check_inputs(args.config, args.base, args.input)
    _check_outputs(args.report, args.out)
    cfg = _experiment(args)
    days = [int(d) for d in args.days.split(",")]
    if args.base:
        sc = _scenario(args.base)
        sc = replace(sc, seed=_seed(args, sc.seed))
        baseline = build_signatures_report(simulate_campaign(sc)).vectors
        later = [(d, build_signatures_report(simulate_campaign(shifted_in_time(sc, d))).vectors) for d in days]
    else:
        if not args.input or not args.later:
            raise UsageError("temporal needs --base SCENARIO, or --in BASELINE with --later DAY=PATH")
        baseline = _vectors(args, cfg)
        later = []
        for item in args.later:
            day, _, path = item.partition("=")
            _check_inputs(path)
            later.append((int(day), _load_features(path)))
    series = temporal_stability(baseline, later, cfg)
    acc = [a for _, a in series]
    write_atomic(args.report, canonical_json({
        "series": [{"day": d, "accuracy": a} for d, a in series],
        "spearman": spearman([d for d, _ in series], acc),
        "config_digest": cfg.digest(),
    }))
    if args.out:
        write_atomic(args.out, table_csv(["day", "accuracy"], series))


def cmd_slices(args):
    _check_inputs(args.config, args.features, args.input)
    _check_outputs(args.report, args.out)
    cfg = _experiment(args)
    kinds = cfg.slices or ["hours", "days"]
    result = time_slice_analysis(_vectors(args, cfg), cfg, kinds=kinds)
    write_atomic(args.report, canonical_json(result))
    if args.out:
        rows = [[kind, r["slice"], r["n_test"], r["method"] or "", r["accuracy"] if r["accuracy"] is not None else ""]
                for kind in kinds for r in result[kind]]
        write_atomic(args.out, table_csv(["kind", "slice", "n_test", "method", "accuracy"], rows))


def cmd_distance(args):
    _check_inputs(args.config, args.features, args.input, args.points)
    _check_outputs(args.report)
    if args.points:
        import csv

        with open(args.points, encoding="utf-8", newline="") as fh:
            try:
                points = [
                    DistancePoint(r["pair"], float(r["accuracy"]), float(r["receiver_distance_km"]),
                                  float(r["sender_distance_km"]))
                    for r in csv.DictReader(fh)
                ]
            except (KeyError, ValueError) as exc:
                raise DataError(f"{args.points}: {exc}") from None
        result = distance_analysis(points)
    else:
        if not args.config:
            raise UsageError("distance needs --points or --config")
        obj = _read_json(args.config)
        cfg = replace(ExperimentConfig.from_json(obj.get("experiment", {})), seed=_seed(args, 0))
        vectors = _vectors(args, cfg)
        result = pairwise_distance_study(vectors, obj["coordinates"], obj["sender"], cfg)
    write_atomic(args.report, canonical_json(result))


def cmd_tune(args):
    _check_inputs(args.config, args.features, args.input)
    _check_outputs(args.report, args.out)
    cfg = _experiment(args)
    grid = TUNING_GRID if args.full_grid else cfg.grid
    if not grid:
        raise DataError("tune: no grid (set 'grid' in the config or pass --full-grid)")
    data = prepare(_vectors(args, cfg), cfg)
    gr = grid_search(cfg.estimator(), data.X, data.y, grid, k=cfg.k, seed=cfg.seed, n_jobs=cfg.n_jobs)
    best = dict(gr.best_params)
    if "hidden_layer_sizes" in best:
        best["hidden_layer_sizes"] = list(best["hidden_layer_sizes"])
    write_atomic(args.report, canonical_json({"best_params": best, "best_score": gr.best_score,
                                              "combinations": len(gr.table)}))
    if args.out:
        keys = [k for k in gr.table[0] if k not in ("mean_accuracy", "fold_std")]
        rows = [[json.dumps(list(r[k])) if isinstance(r[k], tuple) else r[k] for k in keys]
                + [r["mean_accuracy"], r["fold_std"]] for r in gr.table]
        write_atomic(args.out, table_csv([*keys, "mean_accuracy", "fold_std"], rows))


def cmd_countermeasure(args):
    _check_inputs(args.base, args.config)
    _check_outputs(args.report)
    sc = _scenario(args.base)
    sc = replace(sc, seed=_seed(args, sc.seed))
    try:
        cm = Countermeasure(args.kind, args.param, args.applied_to)
    except SidechanError as exc:
        raise DataError(str(exc)) from None
    cfg = _experiment(args)
    base_sc = apply_countermeasure(sc, None)
    cm_sc = apply_countermeasure(sc, cm)
    base = run_experiment(cfg, build_signatures_report(simulate_campaign(base_sc)).vectors)
    countered = run_experiment(cfg, build_signatures_report(simulate_campaign(cm_sc)).vectors)
    write_atomic(args.report, canonical_json({
        "countermeasure": cm.to_json(),
        "baseline_accuracy": base.mean_accuracy,
        "countermeasure_accuracy": countered.mean_accuracy,
        "baseline": base.to_json(),
        "with_countermeasure": countered.to_json(),
    }))
    print(f"baseline {base.mean_accuracy:.4f} -> countermeasure {countered.mean_accuracy:.4f}")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sms-sidechan", description="SMS delivery-timing location inference toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None,
                       help=f"random seed override (default: ${SEED_ENV}, then the config's seed)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
        return p

    def experiment_flags(p, data=True):
        p.add_argument("--config", help="experiment config JSON")
        if data:
            p.add_argument("--features", help="feature CSV (overrides the config's data source)")
            p.add_argument("--in", dest="input", help="trace CSV, feature CSV or scenario JSON")
        p.add_argument("--k", type=int, default=None, help="number of cross-validation folds")
        p.add_argument("--no-standardize", action="store_true", help="feed raw features to the MLP")

    p = add("simulate", cmd_simulate, "Simulate a measurement campaign into a trace CSV.")
    p.add_argument("--config", required=True, help="scenario JSON")
    p.add_argument("--out", required=True, help="output trace CSV")

    p = add("features", cmd_features, "Extract location signatures from a trace CSV.")
    p.add_argument("--in", dest="input", required=True, help="input trace CSV")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--outliers", default="none", help="outlier policy: none, iqr(K) or zscore(T)")
    p.add_argument("--report", help="optional JSON with skip and outlier counts")

    p = add("summarize", cmd_summarize, "Per-label counts, failure rate and time span of a trace.")
    p.add_argument("--in", dest="input", required=True, help="input trace CSV")
    p.add_argument("--out", help="output JSON (default: stdout)")

    p = add("train", cmd_train, "Train one MLP on all signatures and save it as JSON.")
    experiment_flags(p)
    p.add_argument("--out", required=True, help="output model JSON")

    p = add("evaluate", cmd_evaluate, "Run a k-fold classification experiment.")
    experiment_flags(p)
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--out", help="optional confusion-matrix CSV")

    p = add("hierarchy", cmd_hierarchy, "Step-wise classification of a victim's signatures.")
    p.add_argument("--config", required=True, help="hierarchy plan JSON")
    p.add_argument("--features", help="training feature CSV")
    p.add_argument("--in", dest="input", help="training trace CSV, feature CSV or scenario JSON")
    p.add_argument("--victim", required=True, help="feature CSV of the victim's signatures")
    p.add_argument("--batch", type=int, default=None, help="signatures per decision (default: all)")
    p.add_argument("--report", required=True, help="output decision JSON")

    p = add("temporal", cmd_temporal, "Accuracy of a day-0 model on data from later days.")
    experiment_flags(p)
    p.add_argument("--base", help="scenario JSON; later days are simulated from it")
    p.add_argument("--days", default="0,7,14,21,28,35", help="comma-separated days after training")
    p.add_argument("--later", action="append", help="DAY=PATH feature CSV (repeatable, without --base)")
    p.add_argument("--report", required=True, help="output JSON series")
    p.add_argument("--out", help="optional CSV series")

    p = add("slices", cmd_slices, "Hold-out accuracy per time-of-day band and weekday.")
    experiment_flags(p)
    p.add_argument("--report", required=True, help="output JSON")
    p.add_argument("--out", help="optional CSV table")

    p = add("distance", cmd_distance, "Correlate pairwise accuracy with distances.")
    p.add_argument("--config", help="JSON with 'experiment', 'coordinates' and 'sender'")
    p.add_argument("--features", help="feature CSV")
    p.add_argument("--in", dest="input", help="trace CSV, feature CSV or scenario JSON")
    p.add_argument("--points", help="CSV of pair,accuracy,receiver_distance_km,sender_distance_km")
    p.add_argument("--report", required=True, help="output JSON")

    p = add("tune", cmd_tune, "Grid search of MLP parameters by k-fold CV.")
    experiment_flags(p)
    p.add_argument("--full-grid", action="store_true", help="search the full 6912-point tuning grid")
    p.add_argument("--report", required=True, help="output JSON with the best parameters")
    p.add_argument("--out", help="optional CSV score table")

    p = add("countermeasure", cmd_countermeasure, "Compare accuracy with and without a countermeasure.")
    experiment_flags(p, data=False)
    p.add_argument("--base", required=True, help="scenario JSON")
    p.add_argument("--kind", required=True, choices=["none", "uniform_random", "constant_pad", "quantize"],
                   help="countermeasure kind")
    p.add_argument("--param", type=float, default=0.0, help="max delay, pad total or step in ms")
    p.add_argument("--applied-to", default="report_leg", choices=["report_leg", "all_legs"],
                   help="which notifications are manipulated")
    p.add_argument("--report", required=True, help="output comparison JSON")
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"sms-sidechan: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SidechanError, ValueError, KeyError, OSError) as exc:
        print(f"sms-sidechan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
