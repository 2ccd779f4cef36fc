# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence (forward and backward over one sequence).

Gate layout along the last axis is [i, f, o, g]. ``xp`` holds the input
projection plus bias for every step; only the recurrent part runs here.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def lstm_forward(double[:, ::1] xp, double[:, ::1] wh, double[::1] h0, double[::1] c0):
    cdef Py_ssize_t T = xp.shape[0], H4 = xp.shape[1], h = H4 // 4
    cdef Py_ssize_t t, j, k
    out_h = np.empty((T, h))
    out_c = np.empty((T, h))
    out_g = np.empty((T, H4))
    cdef double[:, ::1] Hs = out_h
    cdef double[:, ::1] Cs = out_c
    cdef double[:, ::1] Gs = out_g
    cdef double[::1] z = np.empty(H4)
    cdef double[::1] hp = np.array(h0, dtype=np.float64)
    cdef double[::1] cp = np.array(c0, dtype=np.float64)
    cdef double acc, hv
    with nogil:
        for t in range(T):
            for j in range(H4):
                z[j] = xp[t, j]
            for k in range(h):
                hv = hp[k]
                if hv != 0.0:
                    for j in range(H4):
                        z[j] += hv * wh[k, j]
            for j in range(h):
                Gs[t, j] = _sigmoid(z[j])
                Gs[t, h + j] = _sigmoid(z[h + j])
                Gs[t, 2 * h + j] = _sigmoid(z[2 * h + j])
                Gs[t, 3 * h + j] = tanh(z[3 * h + j])
                acc = Gs[t, h + j] * cp[j] + Gs[t, j] * Gs[t, 3 * h + j]
                Cs[t, j] = acc
                Hs[t, j] = Gs[t, 2 * h + j] * tanh(acc)
            for j in range(h):
                hp[j] = Hs[t, j]
                cp[j] = Cs[t, j]
    return out_h, out_c, out_g


def lstm_backward(double[:, ::1] dH, double[:, ::1] wh, double[:, ::1] H, double[:, ::1] C,
                  double[:, ::1] G, double[::1] h0, double[::1] c0):
    cdef Py_ssize_t T = dH.shape[0], h = dH.shape[1], H4 = 4 * h
    cdef Py_ssize_t t, j, k
    out_dxp = np.zeros((T, H4))
    out_dwh = np.zeros((h, H4))
    cdef double[:, ::1] dxp = out_dxp
    cdef double[:, ::1] dwh = out_dwh
    cdef double[::1] dhn = np.zeros(h)
    cdef double[::1] dcn = np.zeros(h)
    cdef double[::1] dh = np.zeros(h)
    cdef double ig, fg, og, gg, tc, dc, cprev, hprev, acc
    with nogil:
        for t in range(T - 1, -1, -1):
            for j in range(h):
                dh[j] = dH[t, j] + dhn[j]
            for j in range(h):
                ig = G[t, j]
                fg = G[t, h + j]
                og = G[t, 2 * h + j]
                gg = G[t, 3 * h + j]
                tc = tanh(C[t, j])
                cprev = C[t - 1, j] if t > 0 else c0[j]
                dc = dcn[j] + dh[j] * og * (1.0 - tc * tc)
                dxp[t, j] = dc * gg * ig * (1.0 - ig)
                dxp[t, h + j] = dc * cprev * fg * (1.0 - fg)
                dxp[t, 2 * h + j] = dh[j] * tc * og * (1.0 - og)
                dxp[t, 3 * h + j] = dc * ig * (1.0 - gg * gg)
                dcn[j] = dc * fg
            for k in range(h):
                hprev = H[t - 1, k] if t > 0 else h0[k]
                acc = 0.0
                for j in range(H4):
                    dwh[k, j] += hprev * dxp[t, j]
                    acc += wh[k, j] * dxp[t, j]
                dhn[k] = acc
    return out_dxp, out_dwh, np.asarray(dhn), np.asarray(dcn)
