"""Peephole LSTM with singularity-driven dropout, trained by BPTT.

Cell equations (no gate biases, diagonal output peephole)::

    i = sigmoid(W_hi h + W_xi x)
    f = sigmoid(W_hf h + W_xf x)
    c = f * c_prev + i * tanh(W_hc h + W_xc x)
    o = sigmoid(W_ho h + W_xo x + w_co * c)
    h = o * tanh(c)

``c`` is computed before ``o`` because the output gate reads the current
cell. Dropout acts on the final hidden state only, at the boundary to the
affine readout, and its probability is the clamped fraction of singular
samples in the training data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DegenerateSeries, IntervalMismatch, SeriesTooShort, ShapeMismatch
from .series import (
    DEFAULT_DETECTOR_K,
    DEFAULT_DETECTOR_WINDOW,
    DEFAULT_P_MAX,
    DEFAULT_P_MIN,
    HOUR,
    NormParams,
    TrafficSeries,
    detect_singular_points,
    singularity_ratio,
)

GATES = ("i", "f", "o", "c")
PARAM_NAMES = (
    "W_xi", "W_xf", "W_xo", "W_xc",
    "W_hi", "W_hf", "W_ho", "W_hc",
    "W_co", "W_out", "b_out",
)  # fmt: skip


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


@dataclass(eq=False)
class LstmParams:
    """All weights of the cell and the readout.

    Input-to-gate matrices are ``hidden x input``; recurrent matrices are
    ``hidden x hidden``; ``W_co`` is the diagonal peephole as a vector;
    ``W_out`` is ``1 x hidden`` and ``b_out`` a scalar.
    """

    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xo: np.ndarray
    W_xc: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_ho: np.ndarray
    W_hc: np.ndarray
    W_co: np.ndarray
    W_out: np.ndarray
    b_out: float

    def __post_init__(self):
        for name in PARAM_NAMES[:-1]:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        self.b_out = float(self.b_out)
        self.validate()

    @property
    def hidden_size(self) -> int:
        return self.W_hi.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_xi.shape[1]

    def validate(self) -> None:
        H = self.W_hi.shape[0] if self.W_hi.ndim == 2 else -1
        I = self.W_xi.shape[1] if self.W_xi.ndim == 2 else -1
        expected = {
            **{f"W_x{g}": (H, I) for g in GATES},
            **{f"W_h{g}": (H, H) for g in GATES},
            "W_co": (H,),
            "W_out": (1, H),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape or H < 1 or I < 1:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ShapeMismatch(f"{name} has non-finite entries")

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int = 1) -> "LstmParams":
        H, I = hidden_size, input_size
        return cls(
            *[np.zeros((H, I)) for _ in GATES],
            *[np.zeros((H, H)) for _ in GATES],
            np.zeros(H),
            np.zeros((1, H)),
            0.0,
        )

    @classmethod
    def init_uniform(cls, hidden_size: int, rng: np.random.Generator, input_size: int = 1) -> "LstmParams":
        """Every weight drawn from U(-r, r) with r = 1/sqrt(hidden_size); bias 0."""
        r = 1.0 / math.sqrt(hidden_size)
        H, I = hidden_size, input_size
        u = lambda *shape: rng.uniform(-r, r, size=shape)
        return cls(
            *[u(H, I) for _ in GATES],
            *[u(H, H) for _ in GATES],
            u(H),
            u(1, H),
            0.0,
        )

    def arrays(self) -> list[np.ndarray]:
        return [np.atleast_1d(np.asarray(getattr(self, n), dtype=np.float64)) for n in PARAM_NAMES]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "LstmParams":
        parts, pos = [], 0
        for a in self.arrays():
            parts.append(vec[pos : pos + a.size].reshape(a.shape))
            pos += a.size
        parts[-1] = float(parts[-1][0])
        return LstmParams(*parts)

    def copy(self) -> "LstmParams":
        return self.from_vector(self.to_vector().copy())


@dataclass(frozen=True, eq=False)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True, eq=False)
class GateCache:
    """Everything one step's backward pass needs."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def forward_step(params: LstmParams, x_t, prev: LstmState) -> tuple[LstmState, GateCache]:
    """Advance one time step. Works on a single vector or a batch of rows."""
    x = np.asarray(x_t, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    H, I = params.hidden_size, params.input_size
    if x.shape[-1] != I or prev.h.shape[-1] != H or prev.c.shape != prev.h.shape:
        raise ShapeMismatch(
            f"input {x.shape} / state {prev.h.shape} incompatible with hidden {H}, input {I}"
        )
    if x.ndim != prev.h.ndim:
        raise ShapeMismatch("input and state must both be vectors or both be batches")
    h, c_prev = prev.h, prev.c
    i = sigmoid(h @ params.W_hi.T + x @ params.W_xi.T)
    f = sigmoid(h @ params.W_hf.T + x @ params.W_xf.T)
    g = np.tanh(h @ params.W_hc.T + x @ params.W_xc.T)
    c = f * c_prev + i * g
    o = sigmoid(h @ params.W_ho.T + x @ params.W_xo.T + params.W_co * c)
    tanh_c = np.tanh(c)
    h_new = o * tanh_c
    return LstmState(h_new, c), GateCache(x, h, c_prev, i, f, g, o, c, tanh_c)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability p, else 1/(1-p)."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def sd_dropout(h, p: float, training: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    if not training or p == 0:
        return h
    return h * dropout_mask(h.shape, p, rng)


def run_sequence(params: LstmParams, inputs: np.ndarray) -> tuple[np.ndarray, list[GateCache]]:
    """Forward a batch ``(B, T, I)`` from a zero state; returns final h and caches."""
    B, T, _ = inputs.shape
    state = LstmState.zeros(params.hidden_size, B)
    caches = []
    for t in range(T):
        state, cache = forward_step(params, inputs[:, t, :], state)
        caches.append(cache)
    return state.h, caches


def _as_batch(inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ShapeMismatch(f"inputs must be (batch, window[, features]), got {x.shape}")
    return x


def _fused(params: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    # gate order i, f, o, c stacked along the output axis
    W_x = np.vstack([params.W_xi, params.W_xf, params.W_xo, params.W_xc])
    W_h = np.vstack([params.W_hi, params.W_hf, params.W_ho, params.W_hc])
    return W_x, W_h


def loss_and_gradients(
    params: LstmParams,
    inputs,
    targets,
    dropout_p: float,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> tuple[float, LstmParams]:
    """Mean squared error over a batch of windows and its exact gradient.

    ``inputs`` is ``(batch, window)`` or ``(batch, window, features)``. The
    dropout mask on the final hidden state is drawn from ``rng`` unless given
    explicitly; passing the same mask (or an identically seeded generator)
    makes the loss a deterministic function of the weights.
    """
    x = _as_batch(inputs)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    B, T, I = x.shape
    if y.size != B:
        raise ShapeMismatch(f"{B} windows but {y.size} targets")
    if I != params.input_size:
        raise ShapeMismatch(f"features {I} != model input size {params.input_size}")
    H = params.hidden_size
    if mask is None:
        mask = dropout_mask((B, H), dropout_p, rng) if dropout_p > 0 else np.ones((B, H))

    # forward with the four gates fused into one matrix product per step
    W_x, W_h = _fused(params)
    w_co = params.W_co
    ax = x @ W_x.T  # (B, T, 4H)
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))  # activated i, f, o, g
    tcs = np.empty((T, B, H))
    for t in range(T):
        a = ax[:, t, :] + hs[t] @ W_h.T
        act = gates[t]
        act[:, : 2 * H] = expit(a[:, : 2 * H])
        act[:, 3 * H :] = np.tanh(a[:, 3 * H :])
        c = act[:, H : 2 * H] * cs[t] + act[:, :H] * act[:, 3 * H :]
        act[:, 2 * H : 3 * H] = expit(a[:, 2 * H : 3 * H] + w_co * c)
        cs[t + 1] = c
        tcs[t] = np.tanh(c)
        hs[t + 1] = act[:, 2 * H : 3 * H] * tcs[t]

    h_drop = hs[T] * mask
    pred = h_drop @ params.W_out[0] + params.b_out
    resid = pred - y
    loss = float(np.mean(resid**2))

    d_pred = 2.0 * resid / B
    d_a = np.empty((T, B, 4 * H))
    d_wco = np.zeros(H)
    dh = np.outer(d_pred, params.W_out[0]) * mask
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        act = gates[t]
        i, f, o, g = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        tc = tcs[t]
        da_o = dh * tc * o * (1.0 - o)
        dc = dc + dh * o * (1.0 - tc * tc) + da_o * w_co
        d_wco += np.sum(da_o * cs[t + 1], axis=0)
        da = d_a[t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = da_o
        da[:, 3 * H :] = dc * i * (1.0 - g * g)
        dh = da @ W_h
        dc = dc * f

    dW_x = np.einsum("tbk,bti->ki", d_a, x)
    dW_h = np.einsum("tbk,tbj->kj", d_a, hs[:T])
    split = lambda m: [m[k * H : (k + 1) * H] for k in range(4)]
    gx, gh = split(dW_x), split(dW_h)
    grads = LstmParams(
        *gx,
        *gh,
        d_wco,
        (d_pred @ h_drop)[None, :],
        float(d_pred.sum()),
    )
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    input_window: int = 24
    hidden_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    detector_window: int = DEFAULT_DETECTOR_WINDOW
    detector_k: float = DEFAULT_DETECTOR_K
    p_min: float = DEFAULT_P_MIN
    p_max: float = DEFAULT_P_MAX

    def __post_init__(self):
        for name in ("epochs", "input_window", "hidden_size", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("learning_rate", "beta1", "beta2", "epsilon", "detector_k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.detector_window < 3 or self.detector_window % 2 == 0:
            raise ValueError("detector_window must be an odd integer >= 3")
        if not 0 < self.p_min < self.p_max < 1:
            raise ValueError("clamp bounds must satisfy 0 < p_min < p_max < 1")


@dataclass(eq=False)
class SdLstmModel:
    params: LstmParams
    dropout_p: float
    norm: NormParams
    input_window: int
    interval: int = HOUR
    loss_history: tuple = ()


def _windows(z: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    n = z.size - width
    idx = np.arange(width)[None, :] + np.arange(n)[:, None]
    return z[idx], z[width:]


def _adam_fit(
    params: LstmParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    dropout_p: float,
    config: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
) -> tuple[LstmParams, list[float]]:
    theta = params.to_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    n = inputs.shape[0]
    history, step = [], 0
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for begin in range(0, n, config.batch_size):
            batch = order[begin : begin + config.batch_size]
            current = params.from_vector(theta)
            loss, grads = loss_and_gradients(current, inputs[batch], targets[batch], dropout_p, rng)
            g = grads.to_vector()
            step += 1
            m = config.beta1 * m + (1 - config.beta1) * g
            v = config.beta2 * v + (1 - config.beta2) * g * g
            m_hat = m / (1 - config.beta1**step)
            v_hat = v / (1 - config.beta2**step)
            theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
            total += loss * batch.size
        history.append(total / n)
    return params.from_vector(theta), history


def estimate_dropout(series: TrafficSeries, config: TrainConfig) -> float:
    mask = detect_singular_points(series, config.detector_window, config.detector_k)
    return singularity_ratio(mask, config.p_min, config.p_max)


def _check_training_series(series: TrafficSeries, window: int) -> None:
    if series.interval != HOUR:
        raise IntervalMismatch(f"SDLSTM trains on hourly data, got {series.interval} s")
    if len(series) < window + 1:
        raise SeriesTooShort(f"need at least {window + 1} hourly values, got {len(series)}")


def train(
    series: TrafficSeries,
    config: TrainConfig = TrainConfig(),
    singularity_source: TrafficSeries | None = None,
) -> SdLstmModel:
    """Fit an SDLSTM one-step-ahead model on an hourly series.

    The dropout probability is fixed before any weight is touched, from the
    singular points of ``singularity_source`` (default: the training series
    itself).
    """
    _check_training_series(series, config.input_window)
    dropout_p = estimate_dropout(singularity_source if singularity_source is not None else series, config)
    lo, hi = float(series.counts.min()), float(series.counts.max())
    if hi == lo:
        raise DegenerateSeries("cannot train on a constant series")
    norm = NormParams(lo, hi)
    rng = np.random.default_rng(config.seed)
    params = LstmParams.init_uniform(config.hidden_size, rng)
    inputs, targets = _windows(norm.apply(series.counts), config.input_window)
    params, history = _adam_fit(params, inputs[:, :, None], targets, dropout_p, config, config.epochs, rng)
    return SdLstmModel(params, dropout_p, norm, config.input_window, HOUR, tuple(history))


def resume_training(
    model: SdLstmModel,
    series: TrafficSeries,
    config: TrainConfig,
    epochs: int,
    seed: int | tuple[int, ...],
    singularity_source: TrafficSeries | None = None,
) -> SdLstmModel:
    """Continue training an existing model on an extended series.

    Weights and normalization carry over; the dropout probability is
    recomputed from the new data and the optimizer state starts fresh.
    """
    _check_training_series(series, model.input_window)
    dropout_p = estimate_dropout(singularity_source if singularity_source is not None else series, config)
    rng = np.random.default_rng(seed)
    inputs, targets = _windows(model.norm.apply(series.counts), model.input_window)
    params, history = _adam_fit(model.params, inputs[:, :, None], targets, dropout_p, config, epochs, rng)
    return SdLstmModel(params, dropout_p, model.norm, model.input_window, model.interval, model.loss_history + tuple(history))


def predict_values(model: SdLstmModel, values) -> float:
    """One-step prediction from raw hourly counts (uses the last window)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < model.input_window:
        raise SeriesTooShort(f"need {model.input_window} values of history, got {values.size}")
    z = model.norm.apply(values[-model.input_window :])
    state = LstmState.zeros(model.params.hidden_size)
    for x in z:
        state, _ = forward_step(model.params, x, state)
    h = sd_dropout(state.h, model.dropout_p, training=False)
    out = float(model.params.W_out[0] @ h + model.params.b_out)
    return max(float(model.norm.invert(out)), 0.0)


def predict_next(model: SdLstmModel, history: TrafficSeries) -> float:
    if history.interval != model.interval:
        raise IntervalMismatch(f"model expects {model.interval} s data, got {history.interval} s")
    return predict_values(model, history.counts)


def forecast_recursive(model: SdLstmModel, values, steps: int) -> np.ndarray:
    """Multi-step forecast feeding each prediction back as the next input."""
    buf = list(np.asarray(values, dtype=np.float64)[-model.input_window :])
    out = []
    for _ in range(steps):
        nxt = predict_values(model, buf)
        out.append(nxt)
        buf = buf[1:] + [nxt]
    return np.array(out)
