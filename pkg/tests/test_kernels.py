import numpy as np
import pytest

from treedst.model import _lstm_py, kernels

try:
    from treedst.model import _lstm as compiled
except ImportError:
    compiled = None


def inputs(T=6, h=4, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(T, 4 * h)), rng.normal(scale=0.5, size=(h, 4 * h)),
            rng.normal(size=h), rng.normal(size=h), rng.normal(size=(T, h)))


def loss_and_grads(impl, xp, wh, h0, c0, dH):
    H, C, G = impl.lstm_forward(xp, wh, h0, c0)
    return float((H * dH).sum()), impl.lstm_backward(dH, wh, H, C, G, h0, c0)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(compiled is None, reason="extension not built")
def test_backends_agree():
    xp, wh, h0, c0, dH = inputs()
    a = _lstm_py.lstm_forward(xp, wh, h0, c0)
    b = compiled.lstm_forward(xp, wh, h0, c0)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-13)
    ga = _lstm_py.lstm_backward(dH, wh, *a, h0, c0)
    gb = compiled.lstm_backward(dH, wh, *b, h0, c0)
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-13)


@pytest.mark.parametrize("impl", [_lstm_py] + ([compiled] if compiled else []))
def test_backward_matches_finite_differences(impl):
    xp, wh, h0, c0, dH = inputs(T=4, h=3, seed=1)
    _, (dxp, dwh, dh0, dc0) = loss_and_grads(impl, xp, wh, h0, c0, dH)
    eps = 1e-6
    for arr, grad in ((xp, dxp), (wh, dwh), (h0, dh0), (c0, dc0)):
        flat, g = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp, _ = loss_and_grads(impl, xp, wh, h0, c0, dH)
            flat[i] = old - eps
            lm, _ = loss_and_grads(impl, xp, wh, h0, c0, dH)
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            assert abs(num - g[i]) <= 1e-6 * max(1.0, abs(num))


def test_single_step_gates():
    xp, wh, h0, c0, _ = inputs(T=1, h=2)
    H, C, G = _lstm_py.lstm_forward(xp, wh, h0, c0)
    z = xp[0] + h0 @ wh
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, o, g = sig(z[:2]), sig(z[2:4]), sig(z[4:6]), np.tanh(z[6:])
    c = f * c0 + i * g
    np.testing.assert_allclose(C[0], c)
    np.testing.assert_allclose(H[0], o * np.tanh(c))
