"""Fixed-interval vehicle-count series and the operations on them.

A :class:`TrafficSeries` is the data currency of the package: a UTC start
time, an interval of either 15 minutes or one hour, and a vector of
non-negative counts. Everything here is a pure function over immutable
values.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DataError,
    DegenerateSeries,
    DisaggregationUnsupported,
    EmptyMask,
    MisalignedSeries,
    SeriesTooShort,
)

QUARTER_HOUR = 900
HOUR = 3600
VALID_INTERVALS = (QUARTER_HOUR, HOUR)

# 1 / Phi^-1(3/4): makes MAD a consistent estimate of sigma for gaussian data
MAD_SCALE = 1.4826

DEFAULT_DETECTOR_WINDOW = 25
DEFAULT_DETECTOR_K = 3.0
DEFAULT_P_MIN = 0.05
DEFAULT_P_MAX = 0.5


def as_utc(ts: datetime) -> datetime:
    """Return ``ts`` as an aware UTC datetime; naive values are taken as UTC."""
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    return as_utc(datetime.fromisoformat(text))


def format_timestamp(ts: datetime) -> str:
    return as_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def epoch_seconds(ts: datetime) -> int:
    return int(as_utc(ts).timestamp())


def format_number(value: float) -> str:
    """Shortest decimal text that round-trips to the same double."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


@dataclass(frozen=True, eq=False)
class TrafficSeries:
    """Counts at a fixed interval (900 s or 3600 s) starting at ``start``."""

    start: datetime
    interval: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.float64).reshape(-1)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "start", as_utc(self.start))
        if self.interval not in VALID_INTERVALS:
            raise DataError(f"interval must be 900 or 3600 seconds, got {self.interval}")
        if counts.size < 1:
            raise SeriesTooShort("a series needs at least one value")
        if not np.all(np.isfinite(counts)):
            raise DataError("counts must be finite")
        if np.any(counts < 0):
            raise DataError("counts must be non-negative")

    def __len__(self) -> int:
        return self.counts.size

    @property
    def step(self) -> timedelta:
        return timedelta(seconds=self.interval)

    @property
    def end(self) -> datetime:
        """Exclusive end: the start of the interval after the last count."""
        return self.start + len(self) * self.step

    def timestamps(self) -> list[datetime]:
        return [self.start + i * self.step for i in range(len(self))]

    def index_of(self, ts: datetime) -> int:
        offset = (as_utc(ts) - self.start).total_seconds()
        if offset % self.interval:
            raise MisalignedSeries(f"{format_timestamp(ts)} is not on the series grid")
        return int(offset // self.interval)

    def slice(self, begin: int, stop: int | None = None) -> "TrafficSeries":
        stop = len(self) if stop is None else stop
        if begin < 0 or stop > len(self) or stop <= begin:
            raise SeriesTooShort(f"empty or out-of-range slice [{begin}, {stop})")
        return TrafficSeries(self.start + begin * self.step, self.interval, self.counts[begin:stop])

    def until(self, ts: datetime) -> "TrafficSeries":
        """Prefix of the series ending (exclusively) at ``ts``."""
        return self.slice(0, self.index_of(ts))

    def tail(self, n: int) -> "TrafficSeries":
        n = min(n, len(self))
        return self.slice(len(self) - n)

    def extend(self, values) -> "TrafficSeries":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return TrafficSeries(self.start, self.interval, np.concatenate([self.counts, values]))

    def with_counts(self, counts) -> "TrafficSeries":
        return TrafficSeries(self.start, self.interval, counts)


@dataclass(frozen=True)
class NormParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateSeries(f"normalization needs max > min, got ({self.min}, {self.max})")

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.min) / (self.max - self.min)

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * (self.max - self.min) + self.min


@dataclass(frozen=True, eq=False)
class SingularityMask:
    flags: np.ndarray
    window: int
    threshold_k: float

    def __post_init__(self):
        flags = np.array(self.flags, dtype=bool).reshape(-1)
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    @property
    def n_singular(self) -> int:
        return int(np.count_nonzero(self.flags))

    def __len__(self) -> int:
        return self.flags.size


def resample(series: TrafficSeries, target_interval: int) -> TrafficSeries:
    """Aggregate to a coarser interval by summing whole blocks of counts."""
    if target_interval < series.interval:
        raise DisaggregationUnsupported(
            f"cannot disaggregate {series.interval} s counts into {target_interval} s"
        )
    if target_interval % series.interval:
        raise MisalignedSeries(f"{target_interval} s is not a multiple of {series.interval} s")
    ratio = target_interval // series.interval
    if ratio == 1:
        return series
    if epoch_seconds(series.start) % target_interval:
        raise MisalignedSeries(
            f"start {format_timestamp(series.start)} is not on a {target_interval} s boundary"
        )
    if len(series) % ratio:
        raise MisalignedSeries(f"length {len(series)} is not a multiple of {ratio}")
    sums = series.counts.reshape(-1, ratio).sum(axis=1)
    return TrafficSeries(series.start, target_interval, sums)


def resample_complete(series: TrafficSeries, target_interval: int) -> TrafficSeries:
    """Like :func:`resample` but drops partial blocks at either end."""
    if target_interval == series.interval:
        return series
    if target_interval < series.interval or target_interval % series.interval:
        return resample(series, target_interval)
    ratio = target_interval // series.interval
    lead = (-epoch_seconds(series.start) % target_interval) // series.interval
    usable = (len(series) - lead) // ratio * ratio
    if usable <= 0:
        raise SeriesTooShort(f"no complete {target_interval} s block in the series")
    return resample(series.slice(lead, lead + usable), target_interval)


def normalize(series: TrafficSeries) -> tuple[TrafficSeries, NormParams]:
    lo, hi = float(series.counts.min()), float(series.counts.max())
    if hi == lo:
        raise DegenerateSeries("cannot normalize a constant series")
    params = NormParams(lo, hi)
    return series.with_counts(params.apply(series.counts)), params


def denormalize(series: TrafficSeries, params: NormParams) -> TrafficSeries:
    return series.with_counts(params.invert(series.counts))


def rolling_median_mad(values: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered rolling median and MAD with windows clipped at the edges."""
    x = np.asarray(values, dtype=np.float64)
    n, half = x.size, window // 2
    med = np.empty(n)
    mad = np.empty(n)
    if n >= window:
        full = sliding_window_view(x, window)
        m = np.median(full, axis=1)
        med[half : n - half] = m
        mad[half : n - half] = np.median(np.abs(full - m[:, None]), axis=1)
    edges = [t for t in range(n) if t < half or t >= n - half]
    for t in edges:
        w = x[max(0, t - half) : min(n, t + half + 1)]
        m = np.median(w)
        med[t] = m
        mad[t] = np.median(np.abs(w - m))
    return med, mad


def detect_singular_points(
    series: TrafficSeries,
    window: int = DEFAULT_DETECTOR_WINDOW,
    k: float = DEFAULT_DETECTOR_K,
) -> SingularityMask:
    """Flag samples whose robust z-score against the local window exceeds ``k``.

    A sample is singular when ``|x - median| > k * 1.4826 * MAD`` over the
    centered window. With MAD = 0 any deviation at all is singular.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    if not k > 0:
        raise ValueError("k must be positive")
    if len(series) < window:
        raise SeriesTooShort(f"series of length {len(series)} is shorter than window {window}")
    med, mad = rolling_median_mad(series.counts, window)
    flags = np.abs(series.counts - med) > k * MAD_SCALE * mad
    return SingularityMask(flags, window, float(k))


def singularity_ratio(
    mask: SingularityMask, p_min: float = DEFAULT_P_MIN, p_max: float = DEFAULT_P_MAX
) -> float:
    """Fraction of singular samples, clamped to ``[p_min, p_max]``."""
    if not 0 < p_min < p_max < 1:
        raise ValueError("need 0 < p_min < p_max < 1")
    if len(mask) == 0:
        raise EmptyMask("mask has no entries")
    return float(min(max(mask.n_singular / len(mask), p_min), p_max))


def split(series: TrafficSeries, train_fraction: float) -> tuple[TrafficSeries, TrafficSeries]:
    """Chronological train/test split at ``floor(len * train_fraction)``."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    cut = math.floor(len(series) * train_fraction)
    if cut < 1 or cut >= len(series):
        raise SeriesTooShort(f"cannot split {len(series)} values at fraction {train_fraction}")
    return series.slice(0, cut), series.slice(cut)


def concat(first: TrafficSeries, second: TrafficSeries) -> TrafficSeries:
    if first.interval != second.interval or second.start != first.end:
        raise MisalignedSeries("series are not contiguous")
    return first.extend(second.counts)


# --- CSV ----------------------------------------------------------------------

CSV_HEADER = ("timestamp", "count")


def series_to_csv(series: TrafficSeries) -> str:
    buf = io.StringIO()
    buf.write("timestamp,count\n")
    for ts, value in zip(series.timestamps(), series.counts):
        buf.write(f"{format_timestamp(ts)},{format_number(value)}\n")
    return buf.getvalue()


def parse_series_csv(text: str, interval: int | None = None) -> TrafficSeries:
    """Parse the ``timestamp,count`` format, rejecting gaps and duplicates.

    Errors name the offending line (the header is line 1).
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise DataError("line 1: expected header 'timestamp,count'")
    stamps, counts = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise DataError(f"line {lineno}: bad timestamp {row[0]!r}") from None
        try:
            value = float(row[1])
        except ValueError:
            raise DataError(f"line {lineno}: bad count {row[1]!r}") from None
        if not math.isfinite(value) or value < 0:
            raise DataError(f"line {lineno}: count must be a finite non-negative number")
        if stamps:
            delta = int((ts - stamps[-1]).total_seconds())
            if interval is None:
                if delta not in VALID_INTERVALS:
                    kind = "duplicate" if delta <= 0 else "unsupported step"
                    raise DataError(f"line {lineno}: {kind} ({delta} s after previous row)")
                interval = delta
            elif delta != interval:
                if delta <= 0:
                    kind = "duplicate or out-of-order timestamp"
                else:
                    kind = "gap"
                raise DataError(f"line {lineno}: {kind} ({delta} s after previous row, expected {interval})")
        stamps.append(ts)
        counts.append(value)
    if not stamps:
        raise SeriesTooShort("no data rows")
    if interval is None:
        raise DataError("cannot infer the interval from a single row")
    return TrafficSeries(stamps[0], interval, counts)


def read_series_csv(path, interval: int | None = None) -> TrafficSeries:
    with open(path, newline="") as fh:
        return parse_series_csv(fh.read(), interval)


def write_series_csv(series: TrafficSeries, path) -> None:
    atomic_write_text(path, series_to_csv(series))


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
