"""Pure-numpy backend for the gated recurrence kernels.

Layout is time-major: inputs x [T, B, J], states y [T, B, K]. The weight
convention follows the step equations: gate and candidate matrices have
K + J rows, the first K multiplying the previous state and the remaining J
multiplying the current input.

``forward`` returns the full state sequence plus the gate/candidate
activations needed by ``backward``, which runs one reverse sweep of
backpropagation through time and returns gradients for every input.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    pos = 1.0 / (1.0 + e)
    return np.where(x >= 0, pos, 1.0 - pos)


def gru_forward(x, y0, wm, bm, wr, br, wy, by):
    """Run the gated recurrence over a full sequence.

    Returns (y, m, r, c): states, update gates, reset gates and candidate
    activations, each [T, B, K].
    """
    t_len, batch, _ = x.shape
    k = y0.shape[1]
    y = np.empty((t_len, batch, k))
    m = np.empty_like(y)
    r = np.empty_like(y)
    c = np.empty_like(y)
    y_prev = y0
    for t in range(t_len):
        h = np.concatenate([y_prev, x[t]], axis=1)
        m[t] = _sigmoid(h @ wm + bm)
        r[t] = _sigmoid(h @ wr + br)
        g = np.concatenate([r[t] * y_prev, x[t]], axis=1)
        c[t] = np.tanh(g @ wy + by)
        y[t] = (1.0 - m[t]) * y_prev + m[t] * c[t]
        y_prev = y[t]
    return y, m, r, c


def gru_backward(x, y0, wm, wr, wy, y, m, r, c, dy):
    """Backpropagation through time for :func:`gru_forward`.

    ``dy`` [T, B, K] carries the loss gradient w.r.t. every output state.
    Returns (dx, dy0, dwm, dbm, dwr, dbr, dwy, dby).
    """
    t_len, batch, j = x.shape
    k = y0.shape[1]
    dx = np.empty_like(x)
    dwm = np.zeros_like(wm)
    dwr = np.zeros_like(wr)
    dwy = np.zeros_like(wy)
    dbm = np.zeros(k)
    dbr = np.zeros(k)
    dby = np.zeros(k)
    carry = np.zeros((batch, k))
    for t in range(t_len - 1, -1, -1):
        y_prev = y[t - 1] if t > 0 else y0
        d = dy[t] + carry
        dm = d * (c[t] - y_prev)
        dc = d * m[t]
        dyp = d * (1.0 - m[t])

        dac = dc * (1.0 - c[t] * c[t])
        g = np.concatenate([r[t] * y_prev, x[t]], axis=1)
        dwy += g.T @ dac
        dby += dac.sum(axis=0)
        dg = dac @ wy.T
        dr = dg[:, :k] * y_prev
        dyp += dg[:, :k] * r[t]
        dx[t] = dg[:, k:]

        dar = dr * r[t] * (1.0 - r[t])
        dam = dm * m[t] * (1.0 - m[t])
        h = np.concatenate([y_prev, x[t]], axis=1)
        dwr += h.T @ dar
        dbr += dar.sum(axis=0)
        dwm += h.T @ dam
        dbm += dam.sum(axis=0)
        dh = dar @ wr.T + dam @ wm.T
        dyp += dh[:, :k]
        dx[t] += dh[:, k:]
        carry = dyp
    return dx, carry, dwm, dbm, dwr, dbr, dwy, dby
