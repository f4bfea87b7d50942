"""Batch command-line driver.

Three subcommands wire the pipeline end to end from one JSON config:
``synth`` writes a generated CSV, ``run`` preprocesses + trains +
reports, ``filter-sweep`` repeats a run across filter proportions.

Exit codes: 0 success, 2 configuration problem, 3 I/O or data-file
problem, 4 numeric divergence during training (the report is still
written with whatever finished).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import ensemble as ens
from . import linear as lin
from . import neural as net
from .core import SplitSet, evaluate_metrics
from .errors import (
    ConfigError,
    DataFormatError,
    IntegrityError,
    InvalidArgumentError,
    NumericDivergenceError,
    SchemaError,
    UnsupportedVersionError,
)
from .ingest import CsvSchema, SynthConfig, generate_synthetic, read_csv, write_csv
from .persistence import (
    RunReport,
    boost_trace_as_dict,
    save_model,
    trace_as_dict,
    write_report,
)
from .preprocess import FilterConfig, PreprocessConfig, run_preprocess

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

MODEL_NAMES = ("lr", "arima", "lstm", "gru", "cnn")
ENSEMBLE_METHODS = ("none", "bagging", "boosting")

_SECTION_KEYS = {
    "synth": {
        "n_rows", "n_features", "outlier_rate", "constant_feature_count",
        "irrelevant_feature_count", "uneven_segment_rate", "seed",
    },
    "data": {"mileage_column", "meters_column", "target_column"},
    "preprocess": {
        "zscore_threshold", "correlation_threshold", "window_width",
        "split_fractions", "shuffle_seed",
    },
    "filter": {"variance_threshold", "discard_proportion", "seed"},
    "model": {"models", "arima_order", "hidden_size", "kernel_count", "kernel_width"},
    "ensemble": {"method", "members", "boost_threshold", "boost_residual_scope", "stack"},
    "train": {
        "batch_size", "max_epochs", "patience", "learning_rate", "l2_lambda", "seed",
    },
}


def load_config(path) -> dict:
    """Parse and structurally validate the JSON config file."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for section, body in cfg.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        unknown = set(body) - _SECTION_KEYS[section]
        if unknown:
            raise ConfigError(
                f"unknown keys in config section {section!r}: {sorted(unknown)}"
            )
    return cfg


def _synth_config(cfg: dict) -> SynthConfig:
    body = dict(cfg.get("synth", {}))
    if "n_rows" not in body:
        raise ConfigError("synth section must set n_rows")
    try:
        return SynthConfig(**body)
    except InvalidArgumentError as exc:
        raise ConfigError(f"synth section: {exc}") from None


def _schema(cfg: dict) -> CsvSchema:
    return CsvSchema(**cfg.get("data", {}))


def _preprocess_config(cfg: dict) -> PreprocessConfig:
    body = dict(cfg.get("preprocess", {}))
    if "split_fractions" in body:
        body["split_fractions"] = tuple(body["split_fractions"])
    try:
        return PreprocessConfig(**body)
    except InvalidArgumentError as exc:
        raise ConfigError(f"preprocess section: {exc}") from None


def _filter_config(cfg: dict, override_proportion) -> FilterConfig | None:
    body = dict(cfg.get("filter", {}))
    if override_proportion is not None:
        body["discard_proportion"] = float(override_proportion)
    if not body and override_proportion is None:
        return None
    try:
        return FilterConfig(**body)
    except InvalidArgumentError as exc:
        raise ConfigError(f"filter section: {exc}") from None


def _model_list(cfg: dict, override) -> list[str]:
    if override is not None:
        names = [s.strip() for s in override.split(",") if s.strip()]
    else:
        names = list(cfg.get("model", {}).get("models", ["lr"]))
    if not names:
        raise ConfigError("no models selected")
    seen = []
    for name in names:
        if name not in MODEL_NAMES:
            raise ConfigError(
                f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}"
            )
        if name in seen:
            raise ConfigError(f"model {name!r} listed twice")
        seen.append(name)
    return seen


def _network_config(cfg: dict, arch: str) -> net.NetworkConfig:
    model = cfg.get("model", {})
    train_sec = cfg.get("train", {})
    try:
        return net.NetworkConfig(
            arch=arch,
            hidden_size=int(model.get("hidden_size", 32)),
            kernel_count=int(model.get("kernel_count", 5)),
            kernel_width=int(model.get("kernel_width", 5)),
            l2_lambda=float(train_sec.get("l2_lambda", 1e-4)),
            batch_size=int(train_sec.get("batch_size", 128)),
            max_epochs=int(train_sec.get("max_epochs", 100)),
            patience=int(train_sec.get("patience", 3)),
            learning_rate=float(train_sec.get("learning_rate", 1e-3)),
            seed=int(train_sec.get("seed", 0)),
        )
    except InvalidArgumentError as exc:
        raise ConfigError(f"model/train section: {exc}") from None


def _arima_order(cfg: dict) -> tuple[int, int, int]:
    order = cfg.get("model", {}).get("arima_order", [2, 0, 0])
    if not (isinstance(order, (list, tuple)) and len(order) == 3):
        raise ConfigError("arima_order must be a list [p, d, q]")
    return int(order[0]), int(order[1]), int(order[2])


def _ensemble_settings(cfg: dict, method_override, stack_override):
    body = cfg.get("ensemble", {})
    method = method_override if method_override is not None else body.get("method", "none")
    if method not in ENSEMBLE_METHODS:
        raise ConfigError(
            f"ensemble method must be one of {', '.join(ENSEMBLE_METHODS)}"
        )
    stack = bool(body.get("stack", False)) or bool(stack_override)
    return {
        "method": method,
        "members": int(body.get("members", 5)),
        "boost_threshold": float(body.get("boost_threshold", 0.15)),
        "boost_residual_scope": body.get("boost_residual_scope", "original"),
        "stack": stack,
    }


def _split_metrics(predict_fn, split: SplitSet) -> dict:
    out = {}
    for part_name, part in (("train", split.train), ("val", split.val), ("test", split.test)):
        if part.m == 0:
            out[part_name] = None
            continue
        pair = evaluate_metrics(part.targets, predict_fn(part.windows))
        out[part_name] = {"mse": pair.mse, "mae": pair.mae}
    return out


def _train_one_model(name: str, cfg: dict, split: SplitSet, ens_settings: dict):
    """Train one configured model; returns (entry dict, model object)."""
    if name == "lr":
        model = lin.fit_linear(split.train)
        entry = {
            "kind": "linear",
            "metrics": _split_metrics(lambda w: lin.predict_linear_batch(model, w), split),
            "details": {"ridge_fallback": model.ridge_fallback},
        }
        return entry, model
    if name == "arima":
        p, d, q = _arima_order(cfg)
        model = lin.fit_arimax(split.train, p, d, q)
        entry = {
            "kind": "arimax",
            "metrics": _split_metrics(lambda w: lin.predict_arimax_batch(model, w), split),
            "details": {
                "order": [p, d, q],
                "css_initial": model.css_initial,
                "css_final": model.css_final,
                "css_warning": model.css_warning,
            },
        }
        return entry, model
    net_cfg = _network_config(cfg, name)
    if ens_settings["method"] == "none":
        params, trace = net.train(net_cfg, split.train, split.val)
        entry = {
            "kind": "network",
            "metrics": _split_metrics(lambda w: net.predict_batch(params, w), split),
            "trace": trace_as_dict(trace),
        }
        return entry, params
    if ens_settings["method"] == "bagging":
        model = ens.train_bagging(net_cfg, ens_settings["members"], split.train, split.val)
    else:
        model = ens.train_boosting(
            net_cfg,
            ens_settings["members"],
            ens_settings["boost_threshold"],
            split.train,
            split.val,
            residual_scope=ens_settings["boost_residual_scope"],
        )
    if ens_settings["stack"]:
        model = ens.with_stacker(model, split.val)
    member_metrics = [
        _split_metrics(lambda w, p=p: net.predict_batch(p, w), split)
        for p in model.members
    ]
    entry = {
        "kind": "ensemble",
        "metrics": _split_metrics(lambda w: ens.ensemble_predict_batch(model, w), split),
        "ensemble": {
            "method": model.method,
            "member_count": len(model.members),
            "boost_threshold": model.boost_threshold,
            "combiner": {
                "kind": model.combiner.kind,
                "weights": list(model.combiner.weights),
                "bias": model.combiner.bias,
                "fallback_reason": model.combiner.fallback_reason,
            },
            "member_metrics": member_metrics,
            "member_traces": [trace_as_dict(t) for t in model.member_traces],
            "boost_trace": None
            if model.boost_trace is None
            else boost_trace_as_dict(model.boost_trace),
            "retried_members": list(model.retried_members),
        },
    }
    return entry, model


def _print_summary(models: dict) -> None:
    rows = [("model", "split", "mse", "mae")]
    for name in sorted(models):
        metrics = models[name].get("metrics") or {}
        for part in ("train", "val", "test"):
            pair = metrics.get(part)
            if pair is None:
                rows.append((name, part, "-", "-"))
            else:
                rows.append((name, part, f"{pair['mse']:.6g}", f"{pair['mae']:.6g}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(col.ljust(w) for col, w in zip(r, widths)).rstrip())


def _effective_config(cfg: dict, overrides: dict) -> dict:
    echo = json.loads(json.dumps(cfg))
    echo["_overrides"] = {k: v for k, v in overrides.items() if v not in (None, False)}
    return echo


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    synth_cfg = _synth_config(cfg)
    table = generate_synthetic(synth_cfg)
    write_csv(table, args.out)
    print(f"wrote {table.n_rows} rows x {table.n_columns} columns to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    models = _model_list(cfg, args.models)
    ens_settings = _ensemble_settings(cfg, args.ensemble, args.stack)
    pre_cfg = _preprocess_config(cfg)
    filter_cfg = _filter_config(cfg, args.filter_proportion)
    schema = _schema(cfg)

    if not os.path.isfile(args.data):
        raise DataFormatError(f"data file not found: {args.data}")
    table = read_csv(args.data, schema)

    os.makedirs(args.out_dir, exist_ok=True)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    split, audit = run_preprocess(table, pre_cfg, filter_cfg)
    timings["preprocess_seconds"] = time.perf_counter() - t0

    entries: dict[str, dict] = {}
    errors: dict[str, str] = {}
    diverged = False
    for name in models:
        t0 = time.perf_counter()
        try:
            entry, model = _train_one_model(name, cfg, split, ens_settings)
        except NumericDivergenceError as exc:
            diverged = True
            errors[name] = f"numeric divergence: {exc}"
            trace = getattr(exc, "trace", None)
            entries[name] = {
                "kind": "failed",
                "metrics": None,
                "trace": None if trace is None else trace_as_dict(trace),
            }
        else:
            entries[name] = entry
            save_model(model, os.path.join(args.out_dir, f"{name}.tckm"))
        timings[f"train_{name}_seconds"] = time.perf_counter() - t0

    overrides = {
        "models": args.models,
        "ensemble": args.ensemble,
        "stack": args.stack,
        "filter_proportion": args.filter_proportion,
    }
    report = RunReport(
        config=_effective_config(cfg, overrides),
        audit=audit.as_dict(),
        models=entries,
        timings=timings,
        errors=errors,
    )
    write_report(report, os.path.join(args.out_dir, "report.json"))
    _print_summary(entries)
    if errors:
        print("divergence: " + ", ".join(sorted(errors)), file=sys.stderr)
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def _parse_proportions(raw: str) -> list[float]:
    try:
        values = [float(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"proportions must be numbers, got {raw!r}") from None
    if not values:
        raise ConfigError("at least one proportion is required")
    for v in values:
        if not (0.0 <= v <= 1.0):
            raise ConfigError(f"proportions must lie in [0, 1], got {v}")
    return values


def cmd_filter_sweep(args) -> int:
    cfg = load_config(args.config)
    proportions = _parse_proportions(args.proportions)
    models = _model_list(cfg, None)
    swept_model = models[0]
    ens_settings = _ensemble_settings(cfg, None, None)
    pre_cfg = _preprocess_config(cfg)
    base_filter = _filter_config(cfg, None) or FilterConfig()
    schema = _schema(cfg)

    if not os.path.isfile(args.data):
        raise DataFormatError(f"data file not found: {args.data}")
    table = read_csv(args.data, schema)

    rows = []
    shared_audit = None
    errors: dict[str, str] = {}
    timings: dict[str, float] = {}
    diverged = False
    for prop in proportions:
        filter_cfg = FilterConfig(
            variance_threshold=base_filter.variance_threshold,
            discard_proportion=prop,
            seed=base_filter.seed,
        )
        t0 = time.perf_counter()
        split, audit = run_preprocess(table, pre_cfg, filter_cfg)
        if shared_audit is None:
            shared_audit = audit.as_dict()
            shared_audit["filter"] = None  # per-row, not shared
        row = {
            "proportion": prop,
            "candidates": audit.filter_candidates,
            "discarded": audit.filter_discarded,
            "train_size": split.train.m,
        }
        try:
            entry, _model = _train_one_model(swept_model, cfg, split, ens_settings)
        except NumericDivergenceError as exc:
            diverged = True
            errors[f"proportion={prop}"] = f"numeric divergence: {exc}"
            row.update({"train_mse": None, "val_mse": None, "test_mse": None,
                        "train_mae": None, "val_mae": None, "test_mae": None})
        else:
            for part in ("train", "val", "test"):
                pair = entry["metrics"][part]
                row[f"{part}_mse"] = None if pair is None else pair["mse"]
                row[f"{part}_mae"] = None if pair is None else pair["mae"]
        timings[f"proportion_{prop}_seconds"] = time.perf_counter() - t0
        rows.append(row)

    report = RunReport(
        config=_effective_config(cfg, {"proportions": args.proportions}),
        audit=shared_audit or {},
        models={},
        timings=timings,
        sweep=[dict(r, model=swept_model) for r in rows],
        errors=errors,
    )
    write_report(report, args.out)

    header = ("proportion", "discarded", "train_mse", "val_mse", "test_mse")
    table_rows = [header]
    for row in rows:
        table_rows.append(tuple(
            "-" if row.get(k) is None else (f"{row[k]:.6g}" if isinstance(row[k], float) else str(row[k]))
            for k in header
        ))
    widths = [max(len(r[i]) for r in table_rows) for i in range(len(header))]
    for r in table_rows:
        print("  ".join(col.ljust(w) for col, w in zip(r, widths)).rstrip())
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackcast",
        description="Vertical track height forecasting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic measurement CSV")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="preprocess, train, and report")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--data", required=True)
    p_run.add_argument("--out-dir", required=True)
    p_run.add_argument("--models", default=None,
                       help="comma-separated subset of lr,arima,lstm,gru,cnn")
    p_run.add_argument("--ensemble", default=None, choices=ENSEMBLE_METHODS)
    p_run.add_argument("--stack", action="store_true", default=False)
    p_run.add_argument("--filter-proportion", type=float, default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("filter-sweep",
                             help="repeat a run across filter proportions")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--proportions", required=True,
                         help="comma-separated proportions in [0, 1]")
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_filter_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, DataFormatError, IntegrityError, UnsupportedVersionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
