"""Pure numpy LSTM recurrence with the same contract as the compiled kernel."""
from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_forward(xp: np.ndarray, wh: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    T, h4 = xp.shape
    h = h4 // 4
    H = np.empty((T, h))
    C = np.empty((T, h))
    G = np.empty((T, h4))
    hp, cp = h0, c0
    for t in range(T):
        z = xp[t] + hp @ wh
        g = G[t]
        g[: 3 * h] = _sigmoid(z[: 3 * h])
        g[3 * h :] = np.tanh(z[3 * h :])
        cp = g[h : 2 * h] * cp + g[:h] * g[3 * h :]
        hp = g[2 * h : 3 * h] * np.tanh(cp)
        C[t] = cp
        H[t] = hp
    return H, C, G


def lstm_backward(dH, wh, H, C, G, h0, c0):
    T, h = dH.shape
    dxp = np.zeros((T, 4 * h))
    dwh = np.zeros((h, 4 * h))
    dhn = np.zeros(h)
    dcn = np.zeros(h)
    for t in range(T - 1, -1, -1):
        i, f, o, g = G[t, :h], G[t, h : 2 * h], G[t, 2 * h : 3 * h], G[t, 3 * h :]
        tc = np.tanh(C[t])
        cprev = C[t - 1] if t > 0 else c0
        hprev = H[t - 1] if t > 0 else h0
        dh = dH[t] + dhn
        dc = dcn + dh * o * (1.0 - tc * tc)
        dz = dxp[t]
        dz[:h] = dc * g * i * (1.0 - i)
        dz[h : 2 * h] = dc * cprev * f * (1.0 - f)
        dz[2 * h : 3 * h] = dh * tc * o * (1.0 - o)
        dz[3 * h :] = dc * i * (1.0 - g * g)
        dcn = dc * f
        dwh += np.outer(hprev, dz)
        dhn = wh @ dz
    return dxp, dwh, dhn, dcn
