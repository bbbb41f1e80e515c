"""Slow, obviously-correct reference implementations.

Nothing here imports the package's numerical code; each function is
written from the defining formula with plain Python loops so that a bug
in the vectorized version cannot hide in a shared helper.
"""

from __future__ import annotations

import math
import statistics


def sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))


def lstm_step(W, x, h_prev, c_prev):
    """One peephole LSTM step, one unit and one weight at a time.

    ``W`` maps names like ``"W_xi"`` to nested lists; ``W_co`` is the
    diagonal peephole stored as a flat list.
    """
    H = len(h_prev)
    I = len(x)

    def pre(gate, j):
        s = 0.0
        for k in range(H):
            s += W["W_h" + gate][j][k] * h_prev[k]
        for k in range(I):
            s += W["W_x" + gate][j][k] * x[k]
        return s

    i = [sigmoid(pre("i", j)) for j in range(H)]
    f = [sigmoid(pre("f", j)) for j in range(H)]
    g = [math.tanh(pre("c", j)) for j in range(H)]
    c = [f[j] * c_prev[j] + i[j] * g[j] for j in range(H)]
    o = [sigmoid(pre("o", j) + W["W_co"][j] * c[j]) for j in range(H)]
    h = [o[j] * math.tanh(c[j]) for j in range(H)]
    return h, c, {"i": i, "f": f, "o": o, "g": g}


def lstm_window_output(W, window, mask=None):
    """Readout of the final hidden state after feeding ``window`` (scalars)."""
    H = len(W["W_co"])
    h, c = [0.0] * H, [0.0] * H
    for value in window:
        h, c, _ = lstm_step(W, [value], h, c)
    if mask is not None:
        h = [h[j] * mask[j] for j in range(H)]
    return sum(W["W_out"][0][j] * h[j] for j in range(H)) + W["b_out"]


def css_residuals(p, q, c, phi, theta, y):
    """Hand-unrolled conditional-sum-of-squares recursion.

    Residuals are produced for t = p .. n-1; residuals at earlier times are
    taken as zero.
    """
    n = len(y)
    eps = {}
    out = []
    for t in range(p, n):
        e = y[t] - c
        for i in range(1, p + 1):
            e -= phi[i - 1] * y[t - i]
        for j in range(1, q + 1):
            e -= theta[j - 1] * eps.get(t - j, 0.0)
        eps[t] = e
        out.append(e)
    return out


def arma_forecast(c, phi, theta, ys, es, horizon):
    """Recursive ARMA point forecast with future shocks at zero."""
    ys, es = list(ys), list(es)
    out = []
    for _ in range(horizon):
        v = c
        for i, a in enumerate(phi, start=1):
            v += a * ys[-i]
        for j, b in enumerate(theta, start=1):
            v += b * (es[-j] if j <= len(es) else 0.0)
        out.append(v)
        ys.append(v)
        es.append(0.0)
    return out


def undifference(diffs, last_values):
    """Undo d rounds of differencing given the last value of each level.

    ``last_values[k]`` is the last observed value of the k-times
    differenced series.
    """
    out = list(diffs)
    for k in range(len(last_values) - 1, -1, -1):
        acc, level = last_values[k], []
        for v in out:
            acc += v
            level.append(acc)
        out = level
    return out


def rolling_median_mad(values, window):
    half = window // 2
    n = len(values)
    meds, mads = [], []
    for t in range(n):
        w = values[max(0, t - half) : min(n, t + half + 1)]
        m = statistics.median(w)
        meds.append(m)
        mads.append(statistics.median([abs(v - m) for v in w]))
    return meds, mads


def singular_flags(values, window, k):
    meds, mads = rolling_median_mad(values, window)
    return [abs(v - m) > k * 1.4826 * s for v, m, s in zip(values, meds, mads)]


def block_sums(values, ratio):
    out = []
    for b in range(len(values) // ratio):
        total = 0.0
        for v in values[b * ratio : (b + 1) * ratio]:
            total += v
        out.append(total)
    return out


def mape(actual, predicted):
    terms = [abs(a - p) / a for a, p in zip(actual, predicted)]
    return 100.0 * sum(terms) / len(terms)


def central_difference(f, theta, step=1e-5):
    """Numerical gradient of scalar ``f`` at the flat parameter list ``theta``."""
    grad = []
    for k in range(len(theta)):
        up = list(theta)
        down = list(theta)
        up[k] += step
        down[k] -= step
        grad.append((f(up) - f(down)) / (2 * step))
    return grad
