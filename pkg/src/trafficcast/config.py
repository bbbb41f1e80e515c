"""JSON configuration with ``SDLSTM_`` environment overrides.

An override names a section and key separated by a double underscore,
e.g. ``SDLSTM_TRAIN__EPOCHS=50`` or ``SDLSTM_SERVICE__PORT=9000``. Values
are parsed as JSON when possible and taken as plain strings otherwise.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .arima import DEFAULT_FIT_WINDOW
from .combiner import CombinerSchedule, RetrainSettings, ScheduleError, default_schedule
from .lstm import TrainConfig

ENV_PREFIX = "SDLSTM_"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "train": {f.name: f.default for f in fields(TrainConfig) if not f.name.startswith(("detector_", "p_"))},
    "detector": {"window": 25, "k": 3.0},
    "clamp": {"p_min": 0.05, "p_max": 0.5},
    "arima": {"max_p": 3, "max_d": 2, "max_q": 3, "fit_window": DEFAULT_FIT_WINDOW},
    "retrain": {"threshold": 96, "min_history": 192, "resume_epochs": 20, "sync": False},
    "schedule": default_schedule().to_dict(),
    "service": {"host": "127.0.0.1", "port": 8765, "data_dir": "registry"},
}


@dataclass(frozen=True)
class ArimaSearch:
    max_p: int = 3
    max_d: int = 2
    max_q: int = 3
    fit_window: int = DEFAULT_FIT_WINDOW


@dataclass(frozen=True)
class AppConfig:
    train: TrainConfig
    arima: ArimaSearch
    retrain: RetrainSettings
    schedule: CombinerSchedule
    sync_retrain: bool
    host: str
    port: int
    data_dir: str
    raw: dict


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown config key {where}")
        if isinstance(out[key], dict) and key != "schedule":
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = value
    return out


def _env_overrides(environ) -> dict:
    found: dict = {}
    for name, text in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX) :].lower().split("__")
        if len(parts) != 2 or not all(parts):
            raise ConfigError(f"{name}: expected {ENV_PREFIX}SECTION__KEY")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        found.setdefault(parts[0], {})[parts[1]] = value
    return found


def load_config(path=None, environ=None, overrides: dict | None = None) -> AppConfig:
    """Defaults, then the file at ``path``, then the environment, then ``overrides``."""
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be an object")
        raw = _merge(raw, doc)
    raw = _merge(raw, _env_overrides(os.environ if environ is None else environ))
    if overrides:
        raw = _merge(raw, overrides)
    return build(raw)


def build(raw: dict) -> AppConfig:
    try:
        train = TrainConfig(
            **raw["train"],
            detector_window=raw["detector"]["window"],
            detector_k=raw["detector"]["k"],
            p_min=raw["clamp"]["p_min"],
            p_max=raw["clamp"]["p_max"],
        )
        search = ArimaSearch(**raw["arima"])
        retrain = dict(raw["retrain"])
        sync = retrain.pop("sync")
        settings = RetrainSettings(
            arima_window=search.fit_window,
            max_order=(search.max_p, search.max_d, search.max_q),
            train=train,
            **retrain,
        )
        schedule = CombinerSchedule.from_dict(raw["schedule"])
        service = raw["service"]
        port = service["port"]
        if isinstance(port, bool) or not isinstance(port, int) or not 0 <= port < 65536:
            raise ConfigError("service.port must be an integer in [0, 65535]")
    except ScheduleError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return AppConfig(train, search, settings, schedule, bool(sync), str(service["host"]), port, str(service["data_dir"]), raw)
