"""Synthetic 15-minute traffic counts with ground truth.

The daily profile is a flat base rate plus gaussian rush-hour bumps. On
weekends the bumps are scaled down. A bump may be volatile: its height is
then modulated by a persistent log-AR(1) factor, so that flow around that
rush hour swings from one quarter hour to the next in a way no fixed daily
shape captures. White noise is added on top, and a Bernoulli fraction of
samples receives a spike whose positions are kept as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .series import QUARTER_HOUR, TrafficSeries

DEFAULT_START = datetime(2018, 1, 1, tzinfo=timezone.utc)  # a Monday


@dataclass(frozen=True)
class GenSpec:
    """Generator settings.

    ``base_level`` and peak amplitudes are in vehicles per hour; ``noise_sd``
    is in vehicles per 15-minute interval. Each rush peak is
    ``(center minute-of-day, width minutes, amplitude[, volatility])`` where
    volatility is the stationary standard deviation of the log modulation
    (0 when omitted). ``volatility_persistence`` is its lag-one
    autocorrelation per 15-minute step.
    """

    days: int = 74
    seed: int = 0
    base_level: float = 800.0
    rush_peaks: tuple = ((390.0, 60.0, 400.0, 0.7), (1050.0, 60.0, 200.0))
    weekend_scale: float = 0.7
    noise_sd: float = 6.0
    spike_rate: float = 0.01
    spike_magnitude_sigmas: float = 16.0
    volatility_persistence: float = 0.95
    start: datetime = DEFAULT_START

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0 < self.weekend_scale <= 1:
            raise ValueError("weekend_scale must lie in (0, 1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if not 0 <= self.spike_rate < 1:
            raise ValueError("spike_rate must lie in [0, 1)")
        if self.spike_magnitude_sigmas < 3:
            raise ValueError("spike_magnitude_sigmas must be >= 3")
        peaks = []
        for peak in self.rush_peaks:
            if len(peak) not in (3, 4):
                raise ValueError("a rush peak is (center, width, amplitude[, volatility])")
            center, width, amplitude, *vol = map(float, peak)
            volatility = vol[0] if vol else 0.0
            if width <= 0 or volatility < 0:
                raise ValueError("peak width must be positive and volatility non-negative")
            peaks.append((center, width, amplitude, volatility))
        object.__setattr__(self, "rush_peaks", tuple(peaks))
        if not 0 <= self.volatility_persistence < 1:
            raise ValueError("volatility_persistence must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    is_spike: np.ndarray
    noiseless: np.ndarray


def bump(minute_of_day: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.abs(minute_of_day - center)
    d = np.minimum(d, 1440.0 - d)
    return np.exp(-0.5 * (d / width) ** 2)


def log_ar1(n: int, sd: float, phi: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) path with marginal standard deviation ``sd``."""
    shocks = rng.normal(0.0, 1.0, n) * sd * np.sqrt(1.0 - phi * phi)
    path = np.empty(n)
    prev = rng.normal(0.0, sd)
    for t in range(n):
        prev = phi * prev + shocks[t]
        path[t] = prev
    return path


def noiseless_signal(spec: GenSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Expected counts per 15 minutes; ``rng`` drives any volatile peaks."""
    per_day = 96
    n = spec.days * per_day
    idx = np.arange(n)
    # profile evaluated at the midpoint of each 15-minute interval
    minute = (idx % per_day) * 15.0 + 7.5
    weekday = (spec.start.weekday() + idx // per_day) % 7
    # weekends keep the base rate but lose part of the commuter peaks
    day_scale = np.where(weekday >= 5, spec.weekend_scale, 1.0)
    rate = np.full(n, spec.base_level, dtype=np.float64)
    for center, width, amplitude, volatility in spec.rush_peaks:
        height = amplitude * day_scale
        if volatility > 0:
            if rng is None:
                raise ValueError("volatile peaks need a random generator")
            xi = log_ar1(n, volatility, spec.volatility_persistence, rng)
            height = height * np.exp(xi - 0.5 * volatility**2)
        rate += height * bump(minute, center, width)
    return np.maximum(rate / 4.0, 0.0)


def generate(spec: GenSpec = GenSpec()) -> tuple[TrafficSeries, GroundTruth]:
    start = spec.start.astimezone(timezone.utc)
    if (start.hour, start.minute, start.second, start.microsecond) != (0, 0, 0, 0):
        raise ValueError("generator start must be at midnight UTC")
    rng = np.random.default_rng(spec.seed)
    vol_rng = np.random.default_rng([spec.seed, 1])
    clean = noiseless_signal(spec, vol_rng)
    n = clean.size
    noise = rng.normal(0.0, 1.0, n) * spec.noise_sd
    is_spike = rng.random(n) < spec.spike_rate
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    spikes = np.where(is_spike, signs * spec.spike_magnitude_sigmas * spec.noise_sd, 0.0)
    counts = np.maximum(clean + noise + spikes, 0.0)
    return TrafficSeries(start, QUARTER_HOUR, counts), GroundTruth(is_spike, clean)


def ground_truth_csv(series: TrafficSeries, truth: GroundTruth) -> str:
    from .series import format_number, format_timestamp

    lines = ["timestamp,is_spike,noiseless"]
    for ts, spike, value in zip(series.timestamps(), truth.is_spike, truth.noiseless):
        lines.append(f"{format_timestamp(ts)},{int(spike)},{format_number(value)}")
    return "\n".join(lines) + "\n"

