"""Selects the compiled LSTM kernel when available, else the numpy one.

Set ``TREEDST_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _lstm_py

BACKEND = "python"
_impl = _lstm_py
if os.environ.get("TREEDST_PURE_PYTHON") != "1":
    try:
        from . import _lstm as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        BACKEND = "cython"
    except ImportError:
        pass


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def lstm_forward(xp, wh, h0, c0):
    """Run the recurrence; returns hidden states, cell states and activated gates."""
    return _impl.lstm_forward(_c(xp), _c(wh), _c(h0), _c(c0))


def lstm_backward(dH, wh, H, C, G, h0, c0):
    """Gradients w.r.t. the input projection, recurrent weights and initial state."""
    return _impl.lstm_backward(_c(dH), _c(wh), _c(H), _c(C), _c(G), _c(h0), _c(c0))


__all__ = ["BACKEND", "lstm_forward", "lstm_backward"]
