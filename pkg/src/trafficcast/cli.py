"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import asdict
from datetime import timedelta
from pathlib import Path

from . import arima as arima_mod
from .benchmark import fit_models
from .combiner import ARIMA, SDLSTM, predict_hybrid, uniform_schedule
from .config import ConfigError, load_config
from .datagen import GenSpec, generate, ground_truth_csv
from .errors import DataError, NumericError
from .evaluation import DAY_CLASSES, compare, evaluate, load_report, rolling_forecast
from .lstm import train as train_lstm
from .persistence import ModelBundle, load_model, save_model
from .series import (
    HOUR,
    atomic_write_text,
    format_timestamp,
    parse_timestamp,
    read_series_csv,
    resample_complete,
    write_series_csv,
)
from .service import NodeRegistry, Service

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _timestamp(text: str):
    try:
        return parse_timestamp(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an ISO-8601 timestamp") from None


def _config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train"] = {"seed": args.seed}
    return load_config(args.config, overrides=overrides)


def _schedule(name: str, bundle: ModelBundle):
    if name == "hybrid":
        return bundle.schedule
    return uniform_schedule(SDLSTM if name == "sdlstm" else ARIMA)


# -- subcommands --------------------------------------------------------------


def cmd_generate(args) -> int:
    spec = GenSpec(
        days=args.days,
        seed=args.seed if args.seed is not None else 0,
        **({"spike_rate": args.spike_rate} if args.spike_rate is not None else {}),
        **({"noise_sd": args.noise_sd} if args.noise_sd is not None else {}),
    )
    series, truth = generate(spec)
    write_series_csv(series, args.out)
    truth_path = args.truth_out or str(Path(args.out).with_suffix("")) + ".truth.csv"
    atomic_write_text(truth_path, ground_truth_csv(series, truth))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    data = read_series_csv(args.data)
    if data.interval == HOUR and args.kind != "sdlstm":
        raise DataError("ARIMA and hybrid models need 15-minute data")
    lstm = arima_model = None
    if args.kind == "bundle":
        lstm, arima_model = fit_models(data, cfg.train, cfg.arima.fit_window)
    elif args.kind == "sdlstm":
        hourly = resample_complete(data, HOUR)
        lstm = train_lstm(hourly, cfg.train, singularity_source=data if data.interval != HOUR else None)
    else:
        a = cfg.arima
        _, arima_model = arima_mod.select_and_fit(data.counts[-a.fit_window :], a.max_p, a.max_d, a.max_q)
    provenance = {
        "train_config": asdict(cfg.train),
        "data_span": [format_timestamp(data.start), format_timestamp(data.end)],
        "seed": cfg.train.seed,
    }
    save_model(ModelBundle(lstm, arima_model, cfg.schedule, 0, provenance), args.out)
    return EXIT_OK


def _emit(text: str, out) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    history = read_series_csv(args.history)
    schedule = _schedule(args.schedule, bundle)
    if args.until is not None:
        horizon_end = args.until
        if horizon_end <= history.end:
            raise UsageError("--until must lie after the end of the history")
    else:
        horizon_end = history.end + timedelta(hours=args.horizon)
    fc = predict_hybrid(bundle.lstm, bundle.arima, schedule, history, horizon_end)
    _emit(fc.to_csv(), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bundle = load_model(args.model)
    truth = read_series_csv(args.data)
    start = args.test_start if args.test_start is not None else truth.end - timedelta(days=args.test_days)
    if not truth.start < start < truth.end:
        raise UsageError("test period must start inside the data")
    schedule = _schedule(args.schedule, bundle)
    label = args.label or {"hybrid": "SDLSTM-ARIMA", "sdlstm": "SDLSTM", "arima": "ARIMA"}[args.schedule]
    fc = rolling_forecast(bundle.lstm, bundle.arima, schedule, truth, start, truth.end)
    report = evaluate(fc, truth, args.day_class, label, exclude_zero=args.exclude_zero)
    atomic_write_text(args.out_prefix + ".csv", report.to_csv())
    atomic_write_text(args.out_prefix + ".json", report.summary_json())
    sys.stdout.write(f"{label} overall MAPE {report.overall_mape:.4f}% over {len(report.per_point)} points\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    result = compare([load_report(prefix) for prefix in args.reports])
    sys.stdout.write(result.table())
    return EXIT_OK


def cmd_serve(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["train"] = {"seed": args.seed}
    service = {k: v for k, v in (("port", args.port), ("data_dir", args.data_dir), ("host", args.host)) if v is not None}
    if service:
        overrides["service"] = service
    if args.sync_retrain:
        overrides["retrain"] = {"sync": True}
    cfg = load_config(args.config, overrides=overrides)
    registry = NodeRegistry(cfg.retrain, cfg.schedule, cfg.data_dir, sync_retrain=cfg.sync_retrain)

    def ready(addr):
        sys.stdout.write(json.dumps({"listening": [addr[0], addr[1]]}) + "\n")
        sys.stdout.flush()

    try:
        asyncio.run(Service(registry).serve(cfg.host, cfg.port, ready))
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# -- wiring -------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="trafficcast", description="Hybrid SDLSTM/ARIMA traffic flow forecasting")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON config file")
        if seed:
            p.add_argument("--seed", type=_seed)

    p = sub.add_parser("generate", help="write a synthetic 15-minute series and its ground truth")
    p.add_argument("--days", type=_positive_int, default=74)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--spike-rate", type=float)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit models on a series CSV and write a model file")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("bundle", "sdlstm", "arima"), default="bundle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast from the end of a history CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--history", required=True)
    when = p.add_mutually_exclusive_group(required=True)
    when.add_argument("--horizon", type=_positive_int, help="hours ahead")
    when.add_argument("--until", type=_timestamp)
    p.add_argument("--schedule", choices=("hybrid", "sdlstm", "arima"), default="hybrid")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="rolling next-unit evaluation on held-out data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="15-minute series including the test period")
    start = p.add_mutually_exclusive_group()
    start.add_argument("--test-start", type=_timestamp)
    start.add_argument("--test-days", type=_positive_int, default=14)
    p.add_argument("--schedule", choices=("hybrid", "sdlstm", "arima"), default="hybrid")
    p.add_argument("--day-class", choices=DAY_CLASSES, default="all")
    p.add_argument("--label")
    p.add_argument("--exclude-zero", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="rank evaluation reports by overall MAPE")
    p.add_argument("reports", nargs="+", help="report prefixes written by evaluate")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="run the streaming service")
    common(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--sync-retrain", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_USAGE)
    except NumericError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_NUMERIC)
    except DataError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    except FileNotFoundError as exc:
        return _fail("FileNotFoundError", f"{exc.filename}: no such file", EXIT_DATA)
    except ValueError as exc:
        # remaining value errors come from invalid argument combinations
        return _fail(type(exc).__name__, str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
