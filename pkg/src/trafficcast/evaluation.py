"""MAPE, per-hour error profiles and model-vs-model comparison."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .combiner import CombinerSchedule, HybridForecast, plan, predict_hybrid
from .errors import AlignmentError, LengthMismatch, SpanMismatch, ZeroActual
from .series import TrafficSeries, as_utc, format_number, format_timestamp

DAY_CLASSES = ("working", "non-working", "all")


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if a.size != p.size:
        raise LengthMismatch(f"{a.size} actual values vs {p.size} predictions")
    if a.size == 0:
        raise LengthMismatch("need at least one value")
    return a, p


def ape(actual, predicted) -> np.ndarray:
    """Absolute percentage error of each point."""
    a, p = _pair(actual, predicted)
    if np.any(a <= 0):
        raise ZeroActual(f"actual value is zero at position {int(np.argmax(a <= 0))}")
    return 100.0 * np.abs(a - p) / a


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent."""
    return float(np.mean(ape(actual, predicted)))


@dataclass(frozen=True)
class PointError:
    timestamp: datetime
    actual: float
    predicted: float
    ape: float


def _in_class(ts: datetime, day_class: str) -> bool:
    if day_class == "all":
        return True
    weekend = ts.weekday() >= 5
    return weekend if day_class == "non-working" else not weekend


@dataclass(frozen=True, eq=False)
class EvalReport:
    label: str
    day_class: str
    per_point: tuple
    span: tuple
    excluded: int = 0
    per_hour: np.ndarray = field(init=False)
    overall_mape: float = field(init=False)

    def __post_init__(self):
        if self.day_class not in DAY_CLASSES:
            raise ValueError(f"day class must be one of {DAY_CLASSES}")
        errors = np.array([pt.ape for pt in self.per_point], dtype=np.float64)
        hours = np.array([pt.timestamp.hour for pt in self.per_point], dtype=int)
        per_hour = np.full(24, np.nan)
        for h in range(24):
            sel = errors[hours == h]
            if sel.size:
                per_hour[h] = sel.mean()
        per_hour.flags.writeable = False
        object.__setattr__(self, "per_hour", per_hour)
        object.__setattr__(self, "overall_mape", float(errors.mean()) if errors.size else math.nan)

    def to_csv(self) -> str:
        lines = ["timestamp,actual,predicted,ape_percent"]
        for pt in self.per_point:
            lines.append(
                f"{format_timestamp(pt.timestamp)},{format_number(pt.actual)},"
                f"{format_number(pt.predicted)},{format_number(pt.ape)}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "label": self.label,
            "day_class": self.day_class,
            "overall_mape": _json_number(self.overall_mape),
            "per_hour_of_day": [_json_number(v) for v in self.per_hour],
            "points": len(self.per_point),
            "excluded_zero_actual": self.excluded,
            "span": [format_timestamp(self.span[0]), format_timestamp(self.span[1])],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2) + "\n"


def _json_number(value: float):
    return None if math.isnan(value) else value


def _truth_value(truth: TrafficSeries, ts: datetime, interval: int) -> float:
    if interval % truth.interval:
        raise AlignmentError(
            f"a {interval} s forecast point cannot be scored against {truth.interval} s truth"
        )
    offset = (ts - truth.start).total_seconds()
    if offset < 0 or offset % truth.interval:
        raise AlignmentError(f"{format_timestamp(ts)} is not on the truth grid")
    begin = int(offset) // truth.interval
    stop = begin + interval // truth.interval
    if stop > len(truth):
        raise AlignmentError(f"truth does not cover {format_timestamp(ts)} + {interval} s")
    # hourly points are compared against the hourly sum of the truth
    return float(truth.counts[begin:stop].sum())


def evaluate(
    forecast: HybridForecast,
    truth: TrafficSeries,
    day_class: str = "all",
    label: str = "hybrid",
    exclude_zero: bool = False,
) -> EvalReport:
    """Score every forecast point against the truth at the point's own resolution."""
    if day_class not in DAY_CLASSES:
        raise ValueError(f"day class must be one of {DAY_CLASSES}")
    if not forecast.points:
        raise AlignmentError("forecast has no points")
    rows, excluded = [], 0
    for pt in forecast.points:
        if not _in_class(pt.timestamp, day_class):
            continue
        actual = _truth_value(truth, as_utc(pt.timestamp), pt.interval)
        if actual <= 0:
            if exclude_zero:
                excluded += 1
                continue
            raise ZeroActual(f"actual count is zero at {format_timestamp(pt.timestamp)}")
        rows.append(PointError(pt.timestamp, actual, pt.value, 100.0 * abs(actual - pt.value) / actual))
    first, last = forecast.points[0], forecast.points[-1]
    span = (first.timestamp, last.timestamp + timedelta(seconds=last.interval))
    return EvalReport(label, day_class, tuple(rows), span, excluded)


def recompute(report: EvalReport) -> EvalReport:
    """Rebuild a report from its own rows; aggregates carry no hidden state."""
    return EvalReport(report.label, report.day_class, report.per_point, report.span, report.excluded)


@dataclass(frozen=True)
class Comparison:
    ranking: tuple
    per_hour_differences: dict

    def table(self) -> str:
        lines = ["rank,label,overall_mape"]
        for i, r in enumerate(self.ranking, 1):
            lines.append(f"{i},{r.label},{r.overall_mape:.4f}")
        return "\n".join(lines) + "\n"


def compare(reports) -> Comparison:
    """Rank reports by ascending MAPE (ties by label).

    ``per_hour_differences[label]`` is that report's per-hour MAPE minus the
    leader's, hour by hour.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    spans = {(r.span, r.day_class) for r in reports}
    if len(spans) != 1:
        raise SpanMismatch("reports cover different truth spans or day classes")
    ranking = tuple(sorted(reports, key=lambda r: (r.overall_mape, r.label)))
    best = ranking[0]
    diffs = {r.label: r.per_hour - best.per_hour for r in ranking[1:]}
    return Comparison(ranking, diffs)


def rolling_forecast(
    lstm,
    arima_model,
    schedule: CombinerSchedule,
    truth: TrafficSeries,
    start: datetime,
    end: datetime,
) -> HybridForecast:
    """Predict each next unit of time from the true history before it.

    Every slot of ``schedule`` between ``start`` and ``end`` is forecast
    with history up to the slot's own start, so hourly slots are one-step
    SDLSTM predictions and 15-minute slots one-step ARIMA predictions.
    """
    points = []
    for ts, window in plan(schedule, start, end):
        fc = predict_hybrid(
            lstm,
            arima_model,
            schedule,
            truth,
            ts + timedelta(seconds=window.interval),
            origin=ts,
        )
        points.extend(fc.points)
    return HybridForecast(tuple(points))


def load_report(prefix) -> EvalReport:
    """Read back the ``<prefix>.csv`` / ``<prefix>.json`` pair written for a report."""
    from pathlib import Path

    from .errors import CorruptFile
    from .series import parse_timestamp

    prefix = str(prefix)
    try:
        summary = json.loads(Path(prefix + ".json").read_text(encoding="utf-8"))
        lines = Path(prefix + ".csv").read_text(encoding="utf-8").splitlines()
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{prefix}.json: {exc.msg}") from None
    if not lines or lines[0] != "timestamp,actual,predicted,ape_percent":
        raise CorruptFile(f"{prefix}.csv: unexpected header")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            ts, actual, predicted, err = line.split(",")
            rows.append(PointError(parse_timestamp(ts), float(actual), float(predicted), float(err)))
        except ValueError:
            raise CorruptFile(f"{prefix}.csv line {number}: malformed row") from None
    try:
        span = tuple(parse_timestamp(t) for t in summary["span"])
        return EvalReport(summary["label"], summary["day_class"], tuple(rows), span, summary["excluded_zero_actual"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{prefix}.json: {exc}") from None
