"""Unequal-interval combination of SDLSTM and ARIMA forecasts.

A schedule partitions the day into windows. SDLSTM owns hourly windows,
ARIMA owns 15-minute windows, and the hybrid forecast simply routes every
timestamp to the owner of its window. No blending happens anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from . import arima as arima_mod
from . import lstm as lstm_mod
from .errors import HistoryGap, IntervalMismatch, SeriesTooShort, UntrainedModel
from .series import HOUR, QUARTER_HOUR, TrafficSeries, as_utc, format_timestamp, resample_complete

SDLSTM = "SDLSTM"
ARIMA = "ARIMA"
KIND_INTERVAL = {SDLSTM: HOUR, ARIMA: QUARTER_HOUR}
MINUTES_PER_DAY = 1440


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    start: int
    end: int
    kind: str

    @property
    def interval(self) -> int:
        return KIND_INTERVAL[self.kind]

    def contains(self, minute: int) -> bool:
        return self.start <= minute < self.end


def _check_partition(windows: tuple[Window, ...]) -> None:
    if not windows:
        raise ScheduleError("a schedule needs at least one window")
    cursor = 0
    for w in windows:
        if w.kind not in KIND_INTERVAL:
            raise ScheduleError(f"unknown model kind {w.kind!r}")
        if w.start != cursor:
            raise ScheduleError(f"gap or overlap at minute {cursor} (next window starts at {w.start})")
        if w.end <= w.start:
            raise ScheduleError(f"empty window [{w.start}, {w.end})")
        step = w.interval // 60
        if w.start % step or w.end % step:
            raise ScheduleError(f"{w.kind} window [{w.start}, {w.end}) must fall on {step}-minute marks")
        cursor = w.end
    if cursor != MINUTES_PER_DAY:
        raise ScheduleError(f"windows end at minute {cursor}, not {MINUTES_PER_DAY}")


def _as_windows(spec) -> tuple[Window, ...]:
    out = []
    for item in spec:
        if isinstance(item, Window):
            out.append(item)
        else:
            start, end, kind = item
            out.append(Window(int(start), int(end), str(kind).upper()))
    out = tuple(out)
    _check_partition(out)
    return out


@dataclass(frozen=True)
class CombinerSchedule:
    """Time-of-day routing table.

    ``weekday_windows`` optionally replaces ``windows`` on specific weekdays
    (0 = Monday).
    """

    windows: tuple
    weekday_windows: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "windows", _as_windows(self.windows))
        overrides = {}
        for day, spec in dict(self.weekday_windows).items():
            if not 0 <= int(day) <= 6:
                raise ScheduleError(f"weekday must be 0..6, got {day}")
            overrides[int(day)] = _as_windows(spec)
        object.__setattr__(self, "weekday_windows", overrides)

    def windows_for(self, weekday: int) -> tuple[Window, ...]:
        return self.weekday_windows.get(weekday, self.windows)

    def lookup(self, ts: datetime) -> Window:
        ts = as_utc(ts)
        minute = ts.hour * 60 + ts.minute
        for w in self.windows_for(ts.weekday()):
            if w.contains(minute):
                return w
        raise AssertionError("partition invariant violated")  # unreachable after validation

    def kinds(self) -> set[str]:
        found = {w.kind for w in self.windows}
        for spec in self.weekday_windows.values():
            found.update(w.kind for w in spec)
        return found

    def to_dict(self) -> dict:
        doc = {"windows": [[w.start, w.end, w.kind] for w in self.windows]}
        if self.weekday_windows:
            doc["weekday_windows"] = {
                str(day): [[w.start, w.end, w.kind] for w in spec]
                for day, spec in sorted(self.weekday_windows.items())
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CombinerSchedule":
        return cls(
            tuple(tuple(w) for w in doc["windows"]),
            {int(k): tuple(tuple(w) for w in v) for k, v in doc.get("weekday_windows", {}).items()},
        )


def default_schedule() -> CombinerSchedule:
    """ARIMA every 15 minutes over [05:00, 08:00), SDLSTM hourly elsewhere."""
    return CombinerSchedule(((0, 300, SDLSTM), (300, 480, ARIMA), (480, MINUTES_PER_DAY, SDLSTM)))


def uniform_schedule(kind: str) -> CombinerSchedule:
    return CombinerSchedule(((0, MINUTES_PER_DAY, kind),))


@dataclass(frozen=True)
class ForecastPoint:
    timestamp: datetime
    value: float
    source: str
    interval: int


@dataclass(frozen=True)
class HybridForecast:
    points: tuple = ()

    def __len__(self) -> int:
        return len(self.points)

    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points], dtype=np.float64)

    def by_source(self, kind: str) -> "HybridForecast":
        return HybridForecast(tuple(p for p in self.points if p.source == kind))

    def to_csv(self) -> str:
        from .series import format_number

        lines = ["timestamp,predicted,source,interval"]
        for p in self.points:
            lines.append(f"{format_timestamp(p.timestamp)},{format_number(p.value)},{p.source},{p.interval}")
        return "\n".join(lines) + "\n"


def _ceil_to(ts: datetime, seconds: int) -> datetime:
    rem = int(ts.timestamp()) % seconds
    return ts if rem == 0 else ts + timedelta(seconds=seconds - rem)


def plan(schedule: CombinerSchedule, origin: datetime, horizon_end: datetime) -> list[tuple[datetime, Window]]:
    """Enumerate the slots a forecast from ``origin`` to ``horizon_end`` fills.

    A slot is emitted only when its whole interval lies inside
    ``[origin, horizon_end)``. An hourly window entered mid-hour starts at
    the next hour mark.
    """
    slots = []
    t = as_utc(origin)
    end = as_utc(horizon_end)
    while t < end:
        w = schedule.lookup(t)
        aligned = _ceil_to(t, w.interval)
        if aligned != t:
            # the aligned slot may belong to the next window; look it up again
            t = aligned
            continue
        stop = t + timedelta(seconds=w.interval)
        if stop > end:
            break
        slots.append((t, w))
        t = stop
    return slots


def predict_hybrid(
    lstm: lstm_mod.SdLstmModel | None,
    arima_model: arima_mod.ArimaModel | None,
    schedule: CombinerSchedule,
    history_15min: TrafficSeries,
    horizon_end: datetime,
    origin: datetime | None = None,
    anchor_window: int = arima_mod.DEFAULT_FIT_WINDOW,
) -> HybridForecast:
    """Forecast from the end of ``history_15min`` (or ``origin``) to ``horizon_end``.

    SDLSTM points come from a recursive hourly forecast over the complete
    hours of history; hours it cannot see are filled with its own
    predictions, never with ARIMA output. ARIMA points come from a single
    forecast path anchored on the true 15-minute history at the origin.
    """
    if history_15min.interval != QUARTER_HOUR:
        raise IntervalMismatch(f"hybrid history must be 15-minute data, got {history_15min.interval} s")
    if origin is None:
        origin = history_15min.end
    origin = as_utc(origin)
    if origin > history_15min.end:
        raise HistoryGap(
            f"history ends at {format_timestamp(history_15min.end)}, before the origin {format_timestamp(origin)}"
        )
    if origin < history_15min.end:
        history_15min = history_15min.until(origin)
    slots = plan(schedule, origin, horizon_end)
    needed = {w.kind for _, w in slots}
    if SDLSTM in needed and lstm is None:
        raise UntrainedModel("no SDLSTM model is available")
    if ARIMA in needed and arima_model is None:
        raise UntrainedModel("no ARIMA model is available")

    lstm_values = {}
    if SDLSTM in needed:
        hourly = resample_complete(history_15min, HOUR)
        if len(hourly) < lstm.input_window:
            raise SeriesTooShort(f"SDLSTM needs {lstm.input_window} complete hours of history, got {len(hourly)}")
        last = max(t for t, w in slots if w.kind == SDLSTM)
        steps = int((last - hourly.end).total_seconds()) // HOUR + 1
        path = lstm_mod.forecast_recursive(lstm, hourly.counts, steps)
        for t, w in slots:
            if w.kind == SDLSTM:
                lstm_values[t] = float(path[int((t - hourly.end).total_seconds()) // HOUR])

    arima_values = {}
    if ARIMA in needed:
        anchored = arima_mod.anchor(arima_model, history_15min.counts[-anchor_window:])
        last = max(t for t, w in slots if w.kind == ARIMA)
        steps = int((last - origin).total_seconds()) // QUARTER_HOUR + 1
        path = arima_mod.forecast(anchored, steps)
        for t, w in slots:
            if w.kind == ARIMA:
                arima_values[t] = float(path[int((t - origin).total_seconds()) // QUARTER_HOUR])

    points = []
    for t, w in slots:
        value = lstm_values[t] if w.kind == SDLSTM else arima_values[t]
        points.append(ForecastPoint(t, value, w.kind, w.interval))
    return HybridForecast(tuple(points))


@dataclass(frozen=True)
class RetrainSettings:
    """When and how a registry entry refreshes its models."""

    threshold: int = 96
    min_history: int = 192
    arima_window: int = arima_mod.DEFAULT_FIT_WINDOW
    max_order: tuple = (3, 2, 3)
    resume_epochs: int = 20
    train: lstm_mod.TrainConfig = lstm_mod.TrainConfig()

    def __post_init__(self):
        if self.threshold < 1 or self.resume_epochs < 1:
            raise ValueError("threshold and resume_epochs must be positive")
        if self.min_history < 4 * (self.train.input_window + 1):
            raise ValueError("min_history must cover input_window + 1 complete hours")


@dataclass(frozen=True, eq=False)
class NodeEntry:
    """Everything the service keeps for one monitoring point."""

    node_id: str
    history: TrafficSeries | None = None
    lstm: lstm_mod.SdLstmModel | None = None
    arima: arima_mod.ArimaModel | None = None
    schedule: CombinerSchedule = field(default_factory=default_schedule)
    version: int = 0
    last_retrain: datetime | None = None
    pending: int = 0
    predictions: tuple = ()

    @property
    def trained(self) -> bool:
        return self.lstm is not None and self.arima is not None


def append_observations(entry: NodeEntry, observations: TrafficSeries) -> NodeEntry:
    """Append contiguous 15-minute observations without touching the models."""
    if observations.interval != QUARTER_HOUR:
        raise IntervalMismatch(f"observations must be 15-minute data, got {observations.interval} s")
    if entry.history is None:
        history = observations
    else:
        if observations.start != entry.history.end:
            raise HistoryGap(
                f"expected an observation at {format_timestamp(entry.history.end)}, "
                f"got {format_timestamp(observations.start)}"
            )
        history = entry.history.extend(observations.counts)
    return replace(entry, history=history, pending=entry.pending + len(observations))


def due_for_retrain(entry: NodeEntry, settings: RetrainSettings) -> bool:
    return (
        entry.history is not None
        and entry.pending >= settings.threshold
        and len(entry.history) >= settings.min_history
    )


def retrain(entry: NodeEntry, settings: RetrainSettings) -> NodeEntry:
    """Refit ARIMA on the recent window and train or resume the SDLSTM."""
    history = entry.history
    hourly = resample_complete(history, HOUR)
    _, arima_model = arima_mod.select_and_fit(history.counts[-settings.arima_window :], *settings.max_order)
    if entry.lstm is None:
        lstm = lstm_mod.train(hourly, settings.train, singularity_source=history)
    else:
        lstm = lstm_mod.resume_training(
            entry.lstm,
            hourly,
            settings.train,
            settings.resume_epochs,
            seed=(settings.train.seed, entry.version + 1),
            singularity_source=history,
        )
    return replace(
        entry,
        lstm=lstm,
        arima=arima_model,
        version=entry.version + 1,
        last_retrain=history.end,
        pending=0,
    )


def update_models(entry: NodeEntry, observations: TrafficSeries, settings: RetrainSettings = RetrainSettings()) -> NodeEntry:
    """Append observations and retrain once enough new data has accumulated."""
    entry = append_observations(entry, observations)
    if due_for_retrain(entry, settings):
        entry = retrain(entry, settings)
    return entry
