"""Hybrid traffic-flow forecasting: an LSTM with singularity-driven dropout
for hourly flow, ARIMA for short volatile windows, and a scheduler that
combines the two at unequal intervals."""

from .arima import ArimaModel, ArimaOrder, select_and_fit
from .combiner import CombinerSchedule, HybridForecast, default_schedule, predict_hybrid
from .datagen import GenSpec, generate
from .evaluation import EvalReport, compare, evaluate, mape
from .lstm import SdLstmModel, TrainConfig, train
from .series import TrafficSeries

__all__ = [
    "ArimaModel",
    "ArimaOrder",
    "CombinerSchedule",
    "EvalReport",
    "GenSpec",
    "HybridForecast",
    "SdLstmModel",
    "TrafficSeries",
    "TrainConfig",
    "compare",
    "default_schedule",
    "evaluate",
    "generate",
    "mape",
    "predict_hybrid",
    "select_and_fit",
    "train",
]
