from __future__ import annotations

from dataclasses import replace
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficcast import arima as arima_mod
from trafficcast import lstm as lstm_mod
from trafficcast.combiner import (
    ARIMA,
    SDLSTM,
    CombinerSchedule,
    NodeEntry,
    RetrainSettings,
    ScheduleError,
    append_observations,
    default_schedule,
    plan,
    predict_hybrid,
    uniform_schedule,
    update_models,
)
from trafficcast.datagen import GenSpec, generate
from trafficcast.errors import HistoryGap, IntervalMismatch, UntrainedModel
from trafficcast.persistence import ModelBundle, model_to_json
from trafficcast.series import HOUR, QUARTER_HOUR, TrafficSeries, resample_complete

from conftest import QUICK_TRAIN, T0


def at(day, hour, minute=0):
    return T0 + timedelta(days=day, hours=hour, minutes=minute)


# -- schedules ---------------------------------------------------------------------


class TestSchedule:
    def test_default_lookup(self):
        s = default_schedule()
        w = s.lookup(at(0, 6, 15))
        assert (w.kind, w.interval) == (ARIMA, QUARTER_HOUR)
        w = s.lookup(at(0, 13))
        assert (w.kind, w.interval) == (SDLSTM, HOUR)
        assert s.lookup(at(0, 8)).kind == SDLSTM
        assert s.lookup(at(0, 4, 59)).kind == SDLSTM

    def test_default_partitions_the_day(self):
        ws = default_schedule().windows
        assert ws[0].start == 0 and ws[-1].end == 1440
        assert sum(w.end - w.start for w in ws) == 1440
        assert all(a.end == b.start for a, b in zip(ws, ws[1:]))

    @pytest.mark.parametrize(
        "windows",
        [
            ((0, 300, SDLSTM), (360, 1440, SDLSTM)),  # gap
            ((0, 400, SDLSTM), (360, 1440, SDLSTM)),  # overlap
            ((0, 1400, SDLSTM),),  # short of midnight
            ((0, 315, SDLSTM), (315, 1440, ARIMA)),  # hourly window off the hour
            ((0, 310, ARIMA), (310, 1440, ARIMA)),  # off the quarter hour
            ((0, 1440, "LINEAR"),),
            (),
        ],
    )
    def test_rejects_bad_partitions(self, windows):
        with pytest.raises(ScheduleError):
            CombinerSchedule(windows)

    def test_weekday_override(self):
        s = CombinerSchedule(
            default_schedule().windows,
            {5: ((0, 1440, SDLSTM),), 6: ((0, 1440, SDLSTM),)},
        )
        saturday = at(5, 6)  # the reference day is a Monday
        assert saturday.weekday() == 5
        assert s.lookup(saturday).kind == SDLSTM
        assert s.lookup(at(4, 6)).kind == ARIMA
        assert CombinerSchedule.from_dict(s.to_dict()) == s

    def test_round_trip(self):
        s = default_schedule()
        assert CombinerSchedule.from_dict(s.to_dict()) == s


@st.composite
def schedules(draw):
    cuts = sorted(draw(st.sets(st.integers(1, 23), max_size=5)))
    bounds = [0] + [c * 60 for c in cuts] + [1440]
    kinds = draw(st.lists(st.sampled_from([SDLSTM, ARIMA]), min_size=len(bounds) - 1, max_size=len(bounds) - 1))
    return CombinerSchedule(tuple((a, b, k) for a, b, k in zip(bounds, bounds[1:], kinds)))


# -- planning --------------------------------------------------------------------------


class TestPlan:
    def test_boundary_counts(self):
        slots = plan(default_schedule(), at(0, 4), at(0, 9))
        kinds = [w.kind for _, w in slots]
        assert kinds == [SDLSTM] + [ARIMA] * 12 + [SDLSTM]
        assert slots[1][0] == at(0, 5) and slots[-1][0] == at(0, 8)

    def test_mid_hour_entry_skips_to_next_mark(self):
        slots = plan(default_schedule(), at(0, 9, 30), at(0, 12))
        assert [t for t, _ in slots] == [at(0, 10), at(0, 11)]

    def test_partial_final_slot_dropped(self):
        slots = plan(default_schedule(), at(0, 9), at(0, 11, 45))
        assert [t for t, _ in slots] == [at(0, 9), at(0, 10)]

    @given(schedules(), st.integers(0, 95), st.integers(1, 200))
    def test_slots_follow_schedule(self, schedule, start_q, length_q):
        origin = at(0, 0) + timedelta(minutes=15 * start_q)
        end = origin + timedelta(minutes=15 * length_q)
        slots = plan(schedule, origin, end)
        for (t, w), nxt in zip(slots, slots[1:] + [(None, None)]):
            assert schedule.lookup(t) == w
            assert origin <= t and t + timedelta(seconds=w.interval) <= end
            assert int(t.timestamp()) % w.interval == 0
            if nxt[0] is not None:
                assert nxt[0] >= t + timedelta(seconds=w.interval)
                if schedule.lookup(nxt[0]) == w and nxt[0].date() == t.date():
                    # inside one window the spacing is exactly its interval
                    assert nxt[0] == t + timedelta(seconds=w.interval)


# -- hybrid forecasting ------------------------------------------------------------------


@pytest.fixture(scope="module")
def history(fitted_pair):
    series, _, _ = fitted_pair
    return series.slice(0, 12 * 96 + 9 * 4)  # ends at 09:00 on day 12


class TestPredictHybrid:
    def test_single_sdlstm_window(self, fitted_pair, history):
        _, lstm, arima_model = fitted_pair
        fc = predict_hybrid(lstm, arima_model, default_schedule(), history, history.end + timedelta(hours=3))
        assert [p.source for p in fc.points] == [SDLSTM] * 3
        assert [p.interval for p in fc.points] == [HOUR] * 3
        assert [p.timestamp for p in fc.points] == [history.end + timedelta(hours=k) for k in range(3)]

    def test_crossing_the_arima_window(self, fitted_pair):
        series, lstm, arima_model = fitted_pair
        hist = series.slice(0, 12 * 96 + 4 * 4)  # ends at 04:00
        fc = predict_hybrid(lstm, arima_model, default_schedule(), hist, hist.end + timedelta(hours=5))
        sources = [p.source for p in fc.points]
        assert sources == [SDLSTM] + [ARIMA] * 12 + [SDLSTM]

    def test_uniform_sdlstm_is_plain_recursion(self, fitted_pair, history):
        _, lstm, arima_model = fitted_pair
        fc = predict_hybrid(lstm, None, uniform_schedule(SDLSTM), history, history.end + timedelta(hours=30))
        hourly = resample_complete(history, HOUR)
        direct = lstm_mod.forecast_recursive(lstm, hourly.counts, 30)
        assert np.array_equal(fc.values(), direct)

    def test_uniform_arima_is_plain_forecast(self, fitted_pair, history):
        _, lstm, arima_model = fitted_pair
        fc = predict_hybrid(None, arima_model, uniform_schedule(ARIMA), history, history.end + timedelta(hours=10))
        anchored = arima_mod.anchor(arima_model, history.counts[-arima_mod.DEFAULT_FIT_WINDOW :])
        assert np.array_equal(fc.values(), arima_mod.forecast(anchored, 40))

    def test_arima_ignores_sdlstm_outputs(self, fitted_pair):
        series, lstm, arima_model = fitted_pair
        hist = series.slice(0, 12 * 96 + 2 * 4)  # 02:00, three SDLSTM hours before the window
        fc = predict_hybrid(lstm, arima_model, default_schedule(), hist, hist.end + timedelta(hours=4))
        anchored = arima_mod.anchor(arima_model, hist.counts[-arima_mod.DEFAULT_FIT_WINDOW :])
        path = arima_mod.forecast(anchored, 16)
        arima_pts = fc.by_source(ARIMA).values()
        assert np.array_equal(arima_pts, path[12:16])

    def test_origin_truncates_history(self, fitted_pair, history):
        _, lstm, arima_model = fitted_pair
        origin = history.end - timedelta(hours=2)
        a = predict_hybrid(lstm, arima_model, default_schedule(), history, origin + timedelta(hours=2), origin=origin)
        b = predict_hybrid(lstm, arima_model, default_schedule(), history.until(origin), origin + timedelta(hours=2))
        assert a == b

    def test_errors(self, fitted_pair, history):
        _, lstm, arima_model = fitted_pair
        end = history.end + timedelta(hours=3)
        with pytest.raises(HistoryGap):
            predict_hybrid(lstm, arima_model, default_schedule(), history, end, origin=history.end + timedelta(hours=1))
        with pytest.raises(UntrainedModel):
            predict_hybrid(None, arima_model, default_schedule(), history, end)
        with pytest.raises(IntervalMismatch):
            predict_hybrid(lstm, arima_model, default_schedule(), resample_complete(history, HOUR), end)

    def test_csv(self, fitted_pair, history):
        _, lstm, arima_model = fitted_pair
        fc = predict_hybrid(lstm, arima_model, default_schedule(), history, history.end + timedelta(hours=1))
        lines = fc.to_csv().splitlines()
        assert lines[0] == "timestamp,predicted,source,interval"
        assert lines[1].startswith("2018-01-13T09:00:00Z,") and lines[1].endswith(",SDLSTM,3600")

    @given(schedules(), st.integers(0, 95), st.integers(1, 120))
    def test_sources_match_schedule(self, fitted_pair, schedule, start_q, length_q):
        series, lstm, arima_model = fitted_pair
        hist = series.slice(0, 12 * 96 + start_q)
        fc = predict_hybrid(lstm, arima_model, schedule, hist, hist.end + timedelta(minutes=15 * length_q))
        stamps = [p.timestamp for p in fc.points]
        assert stamps == sorted(set(stamps))
        for p in fc.points:
            w = schedule.lookup(p.timestamp)
            assert (p.source, p.interval) == (w.kind, w.interval)
            assert p.value >= 0


# -- model updates -----------------------------------------------------------------------


SETTINGS = RetrainSettings(
    threshold=96,
    min_history=192,
    arima_window=672,
    max_order=(1, 1, 1),
    resume_epochs=2,
    train=replace(QUICK_TRAIN, p_min=0.01),
)


def serialized(entry):
    return model_to_json(ModelBundle(entry.lstm, entry.arima, entry.schedule, entry.version))


@pytest.fixture(scope="module")
def trained_entry():
    series, _ = generate(GenSpec(days=3, seed=1, spike_rate=0.0))
    entry = update_models(NodeEntry("n1"), series.slice(0, 2 * 96), SETTINGS)
    assert entry.version == 1 and entry.trained
    return entry, series


class TestUpdateModels:
    def test_below_threshold_leaves_models(self, trained_entry):
        entry, series = trained_entry
        after = update_models(entry, series.slice(2 * 96, 2 * 96 + 50), SETTINGS)
        assert after.version == entry.version
        assert after.pending == 50
        assert serialized(after) == serialized(entry)
        assert len(after.history) == len(entry.history) + 50

    def test_threshold_bumps_version(self, trained_entry):
        entry, series = trained_entry
        after = update_models(entry, series.slice(2 * 96), SETTINGS)
        assert after.version == entry.version + 1
        assert after.pending == 0
        assert after.last_retrain == series.end
        assert serialized(after) != serialized(entry)

    def test_dropout_follows_new_spikes(self, trained_entry):
        entry, series = trained_entry
        spiky, truth = generate(GenSpec(days=1, seed=0, spike_rate=0.1, start=entry.history.end))
        after = update_models(entry, spiky, SETTINGS)
        assert truth.is_spike.mean() > 0.05
        assert after.lstm.dropout_p > entry.lstm.dropout_p
        assert abs(after.lstm.dropout_p - 0.1) < abs(entry.lstm.dropout_p - 0.1)

    def test_gap_rejected(self, trained_entry):
        entry, series = trained_entry
        with pytest.raises(HistoryGap):
            append_observations(entry, TrafficSeries(entry.history.end + timedelta(minutes=15), QUARTER_HOUR, [1.0]))

    def test_hourly_observations_rejected(self, trained_entry):
        entry, _ = trained_entry
        with pytest.raises(IntervalMismatch):
            append_observations(entry, TrafficSeries(entry.history.end, HOUR, [1.0]))

    def test_retrain_is_deterministic(self, trained_entry):
        entry, series = trained_entry
        a = update_models(entry, series.slice(2 * 96), SETTINGS)
        b = update_models(entry, series.slice(2 * 96), SETTINGS)
        assert serialized(a) == serialized(b)

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            RetrainSettings(threshold=0)
        with pytest.raises(ValueError):
            RetrainSettings(min_history=10)
