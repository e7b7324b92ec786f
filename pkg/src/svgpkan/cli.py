"""Command-line interface.

Verbs: generate, train, predict, importance, experiment. Every command is
deterministic given its resolved configuration and seed; reports embed that
configuration for provenance. Exit codes: 0 success, 2 usage/validation,
3 I/O, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .discovery import DEFAULT_REPEATS, DEFAULT_TAU, run_importance
from .experiments import ExperimentFailure, PRESETS, run_experiment
from .model import (
    HYPER_LR_SCALE,
    Model,
    ModelConfig,
    TrainingFailure,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as err:
        raise CliError(EXIT_IO, f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise CliError(EXIT_USAGE, f"malformed config {path}: {err}") from err


def _merge(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    """defaults <- config file <- explicit flags."""
    merged = dict(defaults)
    for src in (file_cfg, flags):
        for key, value in src.items():
            if value is not None:
                if key not in merged:
                    raise CliError(EXIT_USAGE, f"unknown config key {key!r}")
                merged[key] = value
    return merged


def _parse_widths(text: str | None):
    if text is None:
        return None
    try:
        return [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError as err:
        raise CliError(EXIT_USAGE, f"bad --widths {text!r}") from err


def _read_dataset(path: str) -> data_mod.Dataset:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_IO, f"no such file: {path}")
    try:
        return data_mod.csv_read(p)
    except data_mod.CsvFormatError as err:
        raise CliError(EXIT_USAGE, f"{path}: {err}") from err


def _write_or_io_error(fn, path) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fn(path)
    except OSError as err:
        raise CliError(EXIT_IO, f"cannot write {path}: {err}") from err


def cmd_generate(args) -> int:
    if args.name not in data_mod.GENERATORS:
        raise CliError(EXIT_USAGE, f"unknown dataset {args.name!r}; choose from {sorted(data_mod.GENERATORS)}")
    gen = data_mod.GENERATORS[args.name]
    kwargs = {"n": args.n, "seed": args.seed}
    if args.noise_sd is not None:
        kwargs["noise_sd"] = args.noise_sd
    ds = gen(**kwargs)
    _write_or_io_error(lambda p: data_mod.csv_write(p, ds), args.out)
    print(f"wrote {ds.n} rows x {ds.d + 1} columns to {args.out}")
    return EXIT_OK


TRAIN_DEFAULTS = {
    "widths": None,  # mandatory via flag or config file
    "num_inducing": 20,
    "noise_floor": 1e-4,
    "learning_rate": 1e-2,
    "epochs": 100,
    "batch_size": 64,
    "seed": 0,
    "init_lengthscale": 1.0,
    "init_signal_variance": 1.0,
    "hyper_lr_scale": HYPER_LR_SCALE,
}


def cmd_train(args) -> int:
    ds = _read_dataset(args.data)
    flags = {
        "widths": _parse_widths(args.widths),
        "num_inducing": args.inducing,
        "noise_floor": args.noise_floor,
        "learning_rate": args.learning_rate,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "init_lengthscale": args.init_lengthscale,
        "init_signal_variance": args.init_signal_variance,
        "hyper_lr_scale": args.hyper_lr_scale,
    }
    merged = _merge(TRAIN_DEFAULTS, _load_config_file(args.config), flags)
    if merged["widths"] is None:
        merged["widths"] = [ds.d, 1]
    try:
        config = ModelConfig(**merged)
    except ValueError as err:
        raise CliError(EXIT_USAGE, str(err)) from err
    if config.widths[0] != ds.d:
        raise CliError(EXIT_USAGE, f"widths[0]={config.widths[0]} but dataset has {ds.d} features")
    test_ds = _read_dataset(args.test_data) if args.test_data else None
    model = init_model(config)
    try:
        report = train(model, ds, config, test_ds=test_ds)
    except TrainingFailure as err:
        raise CliError(EXIT_NUMERICAL, str(err)) from err
    _write_or_io_error(lambda p: save_model(model, p), args.out)
    doc = {"config": config.to_dict(), "report": report.to_dict()}
    _write_or_io_error(
        lambda p: Path(p).write_text(json.dumps(doc, indent=2) + "\n"), args.out_report
    )
    last = report.elbo[-1] if report.elbo else None
    print(f"trained {config.epochs} epochs; final elbo {last}; model -> {args.out}")
    return EXIT_OK


def _load_model_checked(path: str) -> Model:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_IO, f"no such file: {path}")
    try:
        return load_model(p)
    except (ValueError, KeyError, json.JSONDecodeError) as err:
        raise CliError(EXIT_USAGE, f"cannot load model {path}: {err}") from err


def cmd_predict(args) -> int:
    model = _load_model_checked(args.model)
    ds = _read_dataset(args.data)
    if ds.d != model.config.widths[0]:
        raise CliError(
            EXIT_USAGE, f"feature mismatch: model expects {model.config.widths[0]}, data has {ds.d}"
        )
    if ds.n == 0:
        rows = []
    else:
        mean, epi, tot = predict(model, ds.X)
        rows = zip(mean, epi, tot)

    def write(p):
        with Path(p).open("w") as fh:
            fh.write("mean,epistemic_var,total_var\n")
            for m, e, t in rows:
                fh.write(f"{float(m)!r},{float(e)!r},{float(t)!r}\n")

    _write_or_io_error(write, args.out)
    print(f"predicted {ds.n} rows -> {args.out}")
    return EXIT_OK


def cmd_importance(args) -> int:
    model = _load_model_checked(args.model)
    ds = _read_dataset(args.data)
    if ds.d != model.config.widths[0]:
        raise CliError(
            EXIT_USAGE, f"feature mismatch: model expects {model.config.widths[0]}, data has {ds.d}"
        )
    try:
        report = run_importance(
            model, ds.X, ds.y, ds.feature_names, repeats=args.repeats, tau=args.tau, seed=args.seed
        )
    except ValueError as err:
        raise CliError(EXIT_USAGE, str(err)) from err
    _write_or_io_error(report.save, args.out)
    bars = args.out_bars or str(Path(args.out).with_suffix("")) + "_bars.csv"

    def write_bars(p):
        with Path(p).open("w") as fh:
            fh.write("feature,delta_mse_mean,delta_mse_sd\n")
            for name, m, s in zip(report.feature_names, report.delta_mse_mean, report.delta_mse_sd):
                fh.write(f"{name},{float(m)!r},{float(s)!r}\n")

    _write_or_io_error(write_bars, bars)
    print(f"selected features: {[report.feature_names[i] for i in report.selected]}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.name not in PRESETS:
        raise CliError(EXIT_USAGE, f"unknown experiment {args.name!r}; choose from {sorted(PRESETS)}")
    overrides = {
        "n": args.n,
        "noise_sd": args.noise_sd,
        "widths": _parse_widths(args.widths),
        "num_inducing": args.inducing,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "repeats": args.repeats,
        "tau": args.tau,
        "init_lengthscale": args.init_lengthscale,
        "init_signal_variance": args.init_signal_variance,
    }
    file_cfg = _load_config_file(args.config)
    for key, value in file_cfg.items():
        if overrides.get(key) is None:
            overrides[key] = value
    try:
        aggregate = run_experiment(
            args.name, trials=args.trials, seed=args.seed, out_dir=args.out, overrides=overrides
        )
    except ExperimentFailure as err:
        raise CliError(EXIT_NUMERICAL, str(err)) from err
    except KeyError as err:
        raise CliError(EXIT_USAGE, str(err)) from err
    print(
        f"{args.name}: {aggregate['trials_completed']}/{args.trials} trials, "
        f"mean test RMSE {aggregate['test_rmse_mean']}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svgpkan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset CSV")
    g.add_argument("--name", required=True, help="exp1 | exp2 | friedman1")
    g.add_argument("--n", type=int, default=600)
    g.add_argument("--noise-sd", dest="noise_sd", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model on a CSV dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--test-data", dest="test_data", default=None)
    t.add_argument("--config", default=None, help="flat JSON config file")
    t.add_argument("--widths", default=None, help="comma-separated layer sizes, e.g. 3,1")
    t.add_argument("--inducing", type=int, default=None)
    t.add_argument("--noise-floor", dest="noise_floor", type=float, default=None)
    t.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--init-lengthscale", dest="init_lengthscale", type=float, default=None)
    t.add_argument("--init-signal-variance", dest="init_signal_variance", type=float, default=None)
    t.add_argument("--hyper-lr-scale", dest="hyper_lr_scale", type=float, default=None)
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--out-report", dest="out_report", required=True)
    t.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="predict with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    i = sub.add_parser("importance", help="permutation importance on a test CSV")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--repeats", type=int, default=DEFAULT_REPEATS)
    i.add_argument("--tau", type=float, default=DEFAULT_TAU)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True, help="report JSON path")
    i.add_argument("--out-bars", dest="out_bars", default=None, help="importance CSV path")
    i.set_defaults(fn=cmd_importance)

    e = sub.add_parser("experiment", help="run a benchmark experiment preset end to end")
    e.add_argument("--name", required=True, help="exp1 | exp2 | friedman")
    e.add_argument("--trials", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--config", default=None)
    e.add_argument("--n", type=int, default=None)
    e.add_argument("--noise-sd", dest="noise_sd", type=float, default=None)
    e.add_argument("--widths", default=None)
    e.add_argument("--inducing", type=int, default=None)
    e.add_argument("--epochs", type=int, default=None)
    e.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    e.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    e.add_argument("--repeats", type=int, default=None)
    e.add_argument("--tau", type=float, default=None)
    e.add_argument("--init-lengthscale", dest="init_lengthscale", type=float, default=None)
    e.add_argument("--init-signal-variance", dest="init_signal_variance", type=float, default=None)
    e.set_defaults(fn=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
