from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from trafficcast.combiner import RetrainSettings, default_schedule  # noqa: E402
from trafficcast.datagen import GenSpec, generate  # noqa: E402
from trafficcast.lstm import TrainConfig  # noqa: E402

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile("default")

T0 = datetime(2018, 1, 1, tzinfo=timezone.utc)

# small enough to train in well under a second
QUICK_TRAIN = TrainConfig(epochs=3, hidden_size=4, input_window=6, batch_size=16, seed=7)
QUICK_RETRAIN = RetrainSettings(
    threshold=96, min_history=192, max_order=(1, 1, 1), resume_epochs=2, train=QUICK_TRAIN
)


def obs_lines(node, series, begin=0, stop=None):
    """Wire-protocol observation lines for a slice of ``series``."""
    from trafficcast.series import format_timestamp

    stop = len(series) if stop is None else stop
    stamps = series.timestamps()
    return [
        json.dumps({"type": "obs", "node": node, "ts": format_timestamp(stamps[k]), "count": float(series.counts[k])})
        for k in range(begin, stop)
    ]


@pytest.fixture(scope="session")
def t0():
    return T0


@pytest.fixture(scope="session")
def quick_train():
    return QUICK_TRAIN


@pytest.fixture(scope="session")
def generated_14d():
    """Two weeks of default synthetic traffic."""
    return generate(GenSpec(days=14, seed=3))


@pytest.fixture(scope="session")
def fitted_pair(generated_14d):
    """A tiny SDLSTM plus a selected ARIMA fitted on the first 12 days."""
    from trafficcast.benchmark import fit_models

    series, _ = generated_14d
    lstm, arima_model = fit_models(series.slice(0, 12 * 96), QUICK_TRAIN)
    return series, lstm, arima_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def schedule():
    return default_schedule()
