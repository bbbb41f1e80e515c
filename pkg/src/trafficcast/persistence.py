"""Versioned JSON model files.

Floats are written with ``repr`` precision (the ``json`` default), which
round-trips every finite double exactly, so a loaded model forecasts
bit-for-bit like the one that was saved. Keys are sorted so identical
models produce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arima import ArimaModel, ArimaOrder
from .combiner import CombinerSchedule, ScheduleError, default_schedule
from .errors import CorruptFile, ShapeMismatch, VersionUnsupported
from .lstm import PARAM_NAMES, LstmParams, SdLstmModel
from .series import NormParams, atomic_write_text

FORMAT_VERSION = 1
KINDS = ("sdlstm", "arima", "bundle")


@dataclass(eq=False)
class ModelBundle:
    """What a model file holds: either model, or both plus a schedule."""

    lstm: SdLstmModel | None = None
    arima: ArimaModel | None = None
    schedule: CombinerSchedule = field(default_factory=default_schedule)
    version: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        if self.lstm is not None and self.arima is None:
            return "sdlstm"
        if self.arima is not None and self.lstm is None:
            return "arima"
        return "bundle"


def _lstm_doc(model: SdLstmModel) -> dict:
    return {
        "hidden_size": model.params.hidden_size,
        "input_window": model.input_window,
        "interval": model.interval,
        "dropout_p": model.dropout_p,
        "norm": {"min": model.norm.min, "max": model.norm.max},
        "params": {name: np.asarray(getattr(model.params, name)).tolist() for name in PARAM_NAMES},
        "loss_history": list(model.loss_history),
    }


def _arima_doc(model: ArimaModel) -> dict:
    o = model.order
    return {
        "order": [o.p, o.d, o.q],
        "c": model.c,
        "phi": list(model.phi),
        "theta": list(model.theta),
        "sigma2": model.sigma2,
        "anchors": list(model.anchors),
        "tail_y": list(model.tail_y),
        "tail_eps": list(model.tail_eps),
    }


def model_to_json(bundle: ModelBundle) -> str:
    kind = bundle.kind
    if bundle.lstm is None and bundle.arima is None and kind != "bundle":
        raise ValueError("nothing to save")
    payload = {}
    if bundle.lstm is not None:
        payload["sdlstm"] = _lstm_doc(bundle.lstm)
    if bundle.arima is not None:
        payload["arima"] = _arima_doc(bundle.arima)
    if kind == "bundle":
        payload["schedule"] = bundle.schedule.to_dict()
        payload["version"] = bundle.version
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "payload": payload,
        "provenance": bundle.provenance,
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_model(bundle: ModelBundle, path) -> None:
    atomic_write_text(path, model_to_json(bundle))


# -- loading ---------------------------------------------------------------


def _field(doc, path: str, key: str):
    if not isinstance(doc, dict):
        raise CorruptFile(f"{path}: expected an object")
    if key not in doc:
        raise CorruptFile(f"{path}.{key}: missing" if path else f"{key}: missing")
    return doc[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise CorruptFile(f"{path}: expected a finite number")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CorruptFile(f"{path}: expected an integer")
    return value


def _numbers(value, path: str) -> tuple:
    if not isinstance(value, list):
        raise CorruptFile(f"{path}: expected a list of numbers")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _array(value, path: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise CorruptFile(f"{path}: expected a numeric array") from None
    if arr.dtype != np.float64 or not np.all(np.isfinite(arr)):
        raise CorruptFile(f"{path}: expected finite numbers")
    for item in np.asarray(value, dtype=object).reshape(-1):
        if isinstance(item, bool):
            raise CorruptFile(f"{path}: expected finite numbers")
    return arr


def _load_lstm(doc, path: str) -> SdLstmModel:
    params_doc = _field(doc, path, "params")
    arrays = {name: _array(_field(params_doc, f"{path}.params", name), f"{path}.params.{name}") for name in PARAM_NAMES}
    arrays["b_out"] = float(arrays["b_out"])
    try:
        params = LstmParams(**arrays)
    except ShapeMismatch as exc:
        raise CorruptFile(f"{path}.params: {exc}") from None
    hidden = _integer(_field(doc, path, "hidden_size"), f"{path}.hidden_size")
    if hidden != params.hidden_size:
        raise CorruptFile(f"{path}.hidden_size: {hidden} does not match the weights")
    norm_doc = _field(doc, path, "norm")
    lo = _number(_field(norm_doc, f"{path}.norm", "min"), f"{path}.norm.min")
    hi = _number(_field(norm_doc, f"{path}.norm", "max"), f"{path}.norm.max")
    if not hi > lo:
        raise CorruptFile(f"{path}.norm: max must exceed min")
    dropout_p = _number(_field(doc, path, "dropout_p"), f"{path}.dropout_p")
    if not 0 <= dropout_p < 1:
        raise CorruptFile(f"{path}.dropout_p: must lie in [0, 1)")
    window = _integer(_field(doc, path, "input_window"), f"{path}.input_window")
    if window < 1:
        raise CorruptFile(f"{path}.input_window: must be positive")
    return SdLstmModel(
        params,
        dropout_p,
        NormParams(lo, hi),
        window,
        _integer(_field(doc, path, "interval"), f"{path}.interval"),
        _numbers(doc.get("loss_history", []), f"{path}.loss_history"),
    )


def _load_arima(doc, path: str) -> ArimaModel:
    order_doc = _field(doc, path, "order")
    if not isinstance(order_doc, list) or len(order_doc) != 3:
        raise CorruptFile(f"{path}.order: expected [p, d, q]")
    try:
        order = ArimaOrder(*(_integer(v, f"{path}.order[{i}]") for i, v in enumerate(order_doc)))
    except ValueError as exc:
        raise CorruptFile(f"{path}.order: {exc}") from None
    parts = {k: _numbers(_field(doc, path, k), f"{path}.{k}") for k in ("phi", "theta", "anchors", "tail_y", "tail_eps")}
    expected = {"phi": order.p, "theta": order.q, "anchors": order.d}
    for key, size in expected.items():
        if len(parts[key]) != size:
            raise CorruptFile(f"{path}.{key}: expected {size} values, got {len(parts[key])}")
    if len(parts["tail_y"]) > order.p or len(parts["tail_eps"]) > order.q:
        raise CorruptFile(f"{path}: forecasting state longer than the model order")
    return ArimaModel(
        order,
        _number(_field(doc, path, "c"), f"{path}.c"),
        parts["phi"],
        parts["theta"],
        _number(_field(doc, path, "sigma2"), f"{path}.sigma2"),
        parts["anchors"],
        parts["tail_y"],
        parts["tail_eps"],
    )


def model_from_json(text: str) -> ModelBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"<document>: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise CorruptFile("<document>: expected an object")
    version = _field(doc, "", "format_version")
    if isinstance(version, bool) or not isinstance(version, int):
        raise CorruptFile("format_version: expected an integer")
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"format_version {version} is not supported (expected {FORMAT_VERSION})")
    kind = _field(doc, "", "kind")
    if kind not in KINDS:
        raise CorruptFile(f"kind: expected one of {KINDS}, got {kind!r}")
    payload = _field(doc, "", "payload")
    if not isinstance(payload, dict):
        raise CorruptFile("payload: expected an object")
    provenance = doc.get("provenance", {})
    if not isinstance(provenance, dict):
        raise CorruptFile("provenance: expected an object")
    bundle = ModelBundle(provenance=provenance)
    if kind in ("sdlstm", "bundle") and (kind == "sdlstm" or "sdlstm" in payload):
        bundle.lstm = _load_lstm(_field(payload, "payload", "sdlstm"), "payload.sdlstm")
    if kind in ("arima", "bundle") and (kind == "arima" or "arima" in payload):
        bundle.arima = _load_arima(_field(payload, "payload", "arima"), "payload.arima")
    if kind == "bundle":
        try:
            bundle.schedule = CombinerSchedule.from_dict(_field(payload, "payload", "schedule"))
        except (ScheduleError, KeyError, TypeError, ValueError) as exc:
            raise CorruptFile(f"payload.schedule: {exc}") from None
        bundle.version = _integer(_field(payload, "payload", "version"), "payload.version")
    return bundle


def load_model(path) -> ModelBundle:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise CorruptFile("<document>: not UTF-8 text") from None
    return model_from_json(text)
