"""NumPy implementations of the hot kernels, used when the compiled core
is unavailable (or forced via ADACOEF_PURE_PYTHON=1). Same API and formulas
as adacoef._kernels._core."""

import numpy as np

BACKEND = "fallback"


def matmul(a, b, ta=False, tb=False):
    lhs = a.T if ta else a
    rhs = b.T if tb else b
    return np.ascontiguousarray(lhs @ rhs)


def linear_fwd(x, w, b):
    return x @ w + b


def linear_bwd(x, w, gy):
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def silu_fwd(x):
    return x * _sigmoid(x)


def silu_bwd(x, gy):
    s = _sigmoid(x)
    return gy * s * (1.0 + x * (1.0 - s))


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    return gy * (1.0 - y * y)


def leaky_relu_fwd(x, slope):
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_bwd(x, gy, slope):
    return np.where(x > 0.0, gy, slope * gy)


AUCTION = None  # compiled core only; transport falls back to scipy


def adam_step(p, m, v, g, step, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
