"""Synthetic train/test benchmark comparing the hybrid with both single models."""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import timedelta

import numpy as np

from . import arima as arima_mod
from . import lstm as lstm_mod
from .combiner import ARIMA, SDLSTM, CombinerSchedule, default_schedule, uniform_schedule
from .datagen import GenSpec, GroundTruth, generate
from .evaluation import EvalReport, evaluate, rolling_forecast
from .series import HOUR, TrafficSeries, detect_singular_points, resample

LABELS = ("SDLSTM-ARIMA", "SDLSTM", "ARIMA")


@dataclass(eq=False)
class BenchmarkResult:
    seed: int
    series: TrafficSeries
    truth: GroundTruth
    train_end: int
    lstm: lstm_mod.SdLstmModel
    arima: arima_mod.ArimaModel
    reports: dict
    detector_recall: float

    def window_mape(self, label: str, start_hour: int, end_hour: int) -> float:
        """Mean APE of the points of ``label`` with start_hour <= hour < end_hour."""
        rows = [pt.ape for pt in self.reports[label].per_point if start_hour <= pt.timestamp.hour < end_hour]
        return float(np.mean(rows))


def fit_models(
    series: TrafficSeries,
    config: lstm_mod.TrainConfig,
    fit_window: int = arima_mod.DEFAULT_FIT_WINDOW,
) -> tuple[lstm_mod.SdLstmModel, arima_mod.ArimaModel]:
    """Train the SDLSTM on hourly sums and select an ARIMA on the recent 15-minute window."""
    lstm = lstm_mod.train(resample(series, HOUR), config, singularity_source=series)
    _, arima_model = arima_mod.select_and_fit(series.counts[-fit_window:])
    return lstm, arima_model


def run_benchmark(
    seed: int,
    spec: GenSpec | None = None,
    train_days: int = 60,
    test_days: int = 14,
    config: lstm_mod.TrainConfig | None = None,
    schedule: CombinerSchedule | None = None,
) -> BenchmarkResult:
    spec = replace(spec or GenSpec(), days=train_days + test_days, seed=seed)
    config = replace(config or lstm_mod.TrainConfig(), seed=seed)
    schedule = schedule or default_schedule()
    series, truth = generate(spec)
    train_end = train_days * 96
    train = series.slice(0, train_end)
    lstm, arima_model = fit_models(train, config)

    mask = detect_singular_points(train, config.detector_window, config.detector_k)
    spikes = truth.is_spike[:train_end]
    recall = float((mask.flags & spikes).sum() / max(spikes.sum(), 1))

    start = train.end
    end = start + timedelta(days=test_days)
    reports = {}
    for label, sched in zip(LABELS, (schedule, uniform_schedule(SDLSTM), uniform_schedule(ARIMA))):
        fc = rolling_forecast(lstm, arima_model, sched, series, start, end)
        reports[label] = evaluate(fc, series, label=label)
    return BenchmarkResult(seed, series, truth, train_end, lstm, arima_model, reports, recall)


def ranking(result: BenchmarkResult) -> list[str]:
    from .evaluation import compare

    return [r.label for r in compare(result.reports.values()).ranking]


def summarize(result: BenchmarkResult) -> dict:
    reports: dict[str, EvalReport] = result.reports
    return {
        "seed": result.seed,
        "dropout_p": result.lstm.dropout_p,
        "arima_order": str(result.arima.order),
        "detector_recall": result.detector_recall,
        "overall_mape": {k: r.overall_mape for k, r in reports.items()},
        "window_05_08_mape": {k: result.window_mape(k, 5, 8) for k in reports},
    }
