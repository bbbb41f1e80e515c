"""ARIMA(p, d, q) by conditional sum of squares.

The ARMA part on the d-times differenced series is

    y_t = c + sum_i phi_i y_{t-i} + eps_t + sum_j theta_j eps_{t-j}

with pre-sample residuals set to zero and residuals defined from t = p on.
Pure-AR models are exact least squares; models with MA terms are fitted by
damped Gauss-Newton on the residual vector with a finite-difference Jacobian.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .errors import (
    NoViableOrder,
    NonInvertibleFit,
    NonStationaryFit,
    NumericError,
    SeriesTooShort,
    SingularNormalEquations,
)
from .series import TrafficSeries

MAX_ITER = 200
RTOL = 1e-10
MAX_HALVINGS = 40
DEFAULT_FIT_WINDOW = 7 * 96
# AR and MA inverse roots closer than this are treated as a common factor
COMMON_FACTOR_TOL = 0.1


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("p and q must be non-negative")
        if self.d not in (0, 1, 2):
            raise ValueError("d must be 0, 1 or 2")
        if self.p + self.q == 0 and self.d == 0:
            raise ValueError("ARIMA(0,0,0) is not a model; use p + q >= 1 or d >= 1")

    @property
    def n_params(self) -> int:
        return self.p + self.q + 1

    def __str__(self) -> str:
        return f"({self.p},{self.d},{self.q})"


@dataclass(frozen=True, eq=False)
class ArimaModel:
    """Fitted coefficients plus the state needed to continue forecasting.

    ``anchors[k]`` is the last value of the k-times differenced series
    (k < d); ``tail_y`` and ``tail_eps`` hold the last p differenced values
    and the last q residuals.
    """

    order: ArimaOrder
    c: float
    phi: tuple
    theta: tuple
    sigma2: float
    anchors: tuple = ()
    tail_y: tuple = ()
    tail_eps: tuple = ()
    rss_trace: tuple = field(default=(), repr=False)

    @property
    def mean(self) -> float:
        """Long-run mean of the differenced process."""
        return self.c / (1.0 - sum(self.phi))


def difference(values, d: int) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.size <= d:
        raise SeriesTooShort(f"cannot difference {x.size} values {d} times")
    for _ in range(d):
        x = np.diff(x)
    return x


def integrate(diffs, d: int, initial) -> np.ndarray:
    """Invert :func:`difference` given the first ``d`` original values."""
    initial = np.asarray(initial, dtype=np.float64)
    if initial.size != d:
        raise ValueError(f"need exactly {d} initial values")
    x = np.asarray(diffs, dtype=np.float64)
    # first element of each intermediate differencing level
    firsts = [initial[0]]
    level = initial
    for _ in range(1, d):
        level = np.diff(level)
        firsts.append(level[0])
    for k in range(d - 1, -1, -1):
        x = np.concatenate([[firsts[k]], firsts[k] + np.cumsum(x)])
    return x


def css_residuals(order: ArimaOrder, c: float, phi, theta, series) -> np.ndarray:
    """One-step residuals for t >= p with zeroed pre-sample residuals."""
    y = np.asarray(series, dtype=np.float64)
    p, q = order.p, order.q
    phi = np.asarray(phi, dtype=np.float64).reshape(p)
    theta = np.asarray(theta, dtype=np.float64).reshape(q)
    n = y.size
    if n <= p:
        return np.zeros(0)
    u = y[p:] - c
    for i in range(1, p + 1):
        u = u - phi[i - 1] * y[p - i : n - i]
    if q == 0:
        return u
    return lfilter([1.0], np.concatenate([[1.0], theta]), u)


def is_stationary(phi) -> bool:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.size == 0:
        return True
    # roots of 1 - phi_1 z - ... - phi_p z^p must lie outside the unit circle
    roots = np.roots(np.concatenate([-phi[::-1], [1.0]]))
    return bool(np.all(np.abs(roots) > 1.0))


def is_invertible(theta) -> bool:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        return True
    roots = np.roots(np.concatenate([theta[::-1], [1.0]]))
    return bool(np.all(np.abs(roots) > 1.0))


def _inverse_roots(poly_tail, sign: float) -> np.ndarray:
    # inverse roots of 1 + sign * sum_k a_k z^k
    a = np.asarray(poly_tail, dtype=np.float64)
    if a.size == 0:
        return np.zeros(0, dtype=complex)
    return np.roots(np.concatenate([[1.0], sign * a]))


def has_common_factor(phi, theta, tol: float = COMMON_FACTOR_TOL) -> bool:
    """True when an AR root nearly cancels an MA root.

    Such a model is practically a lower-order one with a spurious extra
    pair of parameters that can chase a single periodogram ordinate, so
    order selection skips it.
    """
    ar = _inverse_roots(phi, -1.0)
    ma = _inverse_roots(theta, 1.0)
    return any(abs(a - b) < tol for a in ar for b in ma)


def _lagged(y: np.ndarray, p: int, start: int) -> np.ndarray:
    n = y.size
    cols = [np.ones(n - start)] + [y[start - i : n - i] for i in range(1, p + 1)]
    return np.column_stack(cols)


def _lstsq(X: np.ndarray, target: np.ndarray) -> np.ndarray:
    coef, _, rank, sv = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1] or sv[-1] <= sv[0] * 1e-12:
        raise SingularNormalEquations(
            f"design matrix is rank deficient (rank {rank} of {X.shape[1]})"
        )
    return coef


def _initial_guess(y: np.ndarray, order: ArimaOrder) -> np.ndarray:
    """Hannan-Rissanen: long AR residuals stand in for the innovations."""
    p, q = order.p, order.q
    n = y.size
    m = min(max(p + q + 2, 8), n // 4)
    try:
        X = _lagged(y, m, m)
        e = np.zeros(n)
        e[m:] = y[m:] - X @ _lstsq(X, y[m:])
        start = m + q
        cols = [np.ones(n - start)]
        cols += [y[start - i : n - i] for i in range(1, p + 1)]
        cols += [e[start - j : n - j] for j in range(1, q + 1)]
        beta = _lstsq(np.column_stack(cols), y[start:])
    except SingularNormalEquations:
        beta = np.concatenate([[y.mean()], np.zeros(p + q)])
    theta = beta[1 + p :]
    # keep the starting MA polynomial invertible
    if not is_invertible(theta):
        beta[1 + p :] = 0.0
    return beta


def _residuals(beta: np.ndarray, y: np.ndarray, order: ArimaOrder) -> np.ndarray:
    p = order.p
    return css_residuals(order, beta[0], beta[1 : 1 + p], beta[1 + p :], y)


def _rss(r: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(r @ r)
    return value if math.isfinite(value) else math.inf


def _jacobian(beta: np.ndarray, y: np.ndarray, order: ArimaOrder) -> np.ndarray:
    cols = []
    for k in range(beta.size):
        h = 1e-6 * max(1.0, abs(beta[k]))
        up, down = beta.copy(), beta.copy()
        up[k] += h
        down[k] -= h
        cols.append((_residuals(up, y, order) - _residuals(down, y, order)) / (2 * h))
    return np.column_stack(cols)


def gauss_newton(y: np.ndarray, order: ArimaOrder, beta0: np.ndarray) -> tuple[np.ndarray, list[float]]:
    """Minimise the CSS objective; returns the estimate and accepted RSS values."""
    beta = beta0.astype(np.float64).copy()
    r = _residuals(beta, y, order)
    rss = _rss(r)
    if not math.isfinite(rss):
        beta = np.concatenate([[y.mean()], np.zeros(order.p + order.q)])
        r = _residuals(beta, y, order)
        rss = _rss(r)
    trace = [rss]
    for _ in range(MAX_ITER):
        J = _jacobian(beta, y, order)
        if not np.all(np.isfinite(J)):
            break
        step = _lstsq(J, -r)
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            trial = beta + lam * step
            r_trial = _residuals(trial, y, order)
            rss_trial = _rss(r_trial)
            if rss_trial < rss:
                break
            lam *= 0.5
        else:
            break
        change = (rss - rss_trial) / max(rss, np.finfo(float).tiny)
        beta, r, rss = trial, r_trial, rss_trial
        trace.append(rss)
        if change < RTOL:
            break
    return beta, trace


def _state_from(values: np.ndarray, order: ArimaOrder, c, phi, theta) -> dict:
    anchors, level = [], values
    for _ in range(order.d):
        anchors.append(float(level[-1]))
        level = np.diff(level)
    eps = css_residuals(order, c, phi, theta, level)
    return {
        "anchors": tuple(anchors),
        "tail_y": tuple(float(v) for v in level[level.size - order.p :]) if order.p else (),
        "tail_eps": tuple(float(v) for v in eps[eps.size - order.q :]) if order.q else (),
    }


def _values(series) -> np.ndarray:
    if isinstance(series, TrafficSeries):
        return series.counts
    return np.asarray(series, dtype=np.float64)


def fit(series, order: ArimaOrder) -> ArimaModel:
    x = _values(series)
    p, d, q = order.p, order.d, order.q
    y = difference(x, d) if x.size > d else np.zeros(0)
    if y.size < 10 * order.n_params:
        raise SeriesTooShort(
            f"ARIMA{order} needs {10 * order.n_params} values after differencing, got {y.size}"
        )
    if q == 0:
        beta = _lstsq(_lagged(y, p, p), y[p:])
        r = _residuals(beta, y, order)
        trace = [_rss(r)]
    else:
        beta, trace = gauss_newton(y, order, _initial_guess(y, order))
        r = _residuals(beta, y, order)
    if not np.all(np.isfinite(beta)) or not math.isfinite(_rss(r)):
        raise NumericError(f"ARIMA{order} estimation diverged")
    c, phi, theta = float(beta[0]), tuple(map(float, beta[1 : 1 + p])), tuple(map(float, beta[1 + p :]))
    if not is_stationary(phi):
        raise NonStationaryFit(f"ARIMA{order}: AR polynomial has a root inside the unit circle")
    if not is_invertible(theta):
        # residual recursions on new data would diverge
        raise NonInvertibleFit(f"ARIMA{order}: MA polynomial has a root inside the unit circle")
    sigma2 = _rss(r) / r.size
    return ArimaModel(order, c, phi, theta, sigma2, rss_trace=tuple(trace), **_state_from(x, order, c, phi, theta))


def anchor(model: ArimaModel, series) -> ArimaModel:
    """Re-derive the forecasting state from newer observations."""
    x = _values(series)
    o = model.order
    if x.size <= o.d + o.p:
        raise SeriesTooShort(f"need more than {o.d + o.p} values to anchor ARIMA{o}")
    return replace(model, **_state_from(x, o, model.c, model.phi, model.theta))


def forecast(model: ArimaModel, horizon: int) -> np.ndarray:
    """Point forecasts for the next ``horizon`` steps, clamped at zero."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    p, d, q = model.order.p, model.order.d, model.order.q
    ys = list(model.tail_y)
    es = list(model.tail_eps)
    out = np.empty(horizon)
    for h in range(horizon):
        value = model.c
        for i in range(1, p + 1):
            value += model.phi[i - 1] * ys[-i]
        for j in range(1, q + 1):
            if j <= len(es):
                value += model.theta[j - 1] * es[-j]
        out[h] = value
        if p:
            ys.append(value)
        if q:
            es.append(0.0)
    for k in range(d - 1, -1, -1):
        out = model.anchors[k] + np.cumsum(out)
    return np.maximum(out, 0.0)


def aic(rss: float, n: int, order: ArimaOrder) -> float:
    if rss <= 0 or n < 1:
        return math.inf
    return n * math.log(rss / n) + 2 * order.n_params


def trailing_rss(model: ArimaModel, values, n: int) -> float:
    """Sum of squares of the last ``n`` in-sample residuals of ``model``."""
    o = model.order
    r = css_residuals(o, model.c, model.phi, model.theta, difference(values, o.d))
    return _rss(r[r.size - n :])


def candidate_orders(max_p: int, max_d: int, max_q: int):
    for p, d, q in itertools.product(range(max_p + 1), range(max_d + 1), range(max_q + 1)):
        if p + q == 0 and d == 0:
            continue
        yield ArimaOrder(p, d, q)


def select_order(series, max_p: int = 3, max_d: int = 2, max_q: int = 3) -> ArimaOrder:
    """Grid search by AIC; ties go to the smaller p + q, then the smaller d.

    Failed fits and fits with a near-common AR/MA factor are skipped.
    """
    return select_and_fit(series, max_p, max_d, max_q)[0]


def select_and_fit(series, max_p: int = 3, max_d: int = 2, max_q: int = 3) -> tuple[ArimaOrder, ArimaModel]:
    if not (0 <= max_p <= 3 and 0 <= max_d <= 2 and 0 <= max_q <= 3):
        raise ValueError("grid bounds must satisfy max_p <= 3, max_d <= 2, max_q <= 3")
    x = _values(series)
    # every candidate is scored on the same trailing stretch of residuals;
    # otherwise orders that consume more observations get a scale-dependent edge
    n = x.size - max_d - max_p
    best = None
    for order in candidate_orders(max_p, max_d, max_q):
        try:
            model = fit(x, order)
        except (NumericError, SeriesTooShort):
            continue
        if has_common_factor(model.phi, model.theta):
            continue
        score = aic(trailing_rss(model, x, n), n, order)
        if not math.isfinite(score):
            continue
        key = (score, order.p + order.q, order.d)
        if best is None or key < best[0]:
            best = (key, order, model)
    if best is None:
        raise NoViableOrder("no order in the grid produced a valid fit")
    return best[1], best[2]
