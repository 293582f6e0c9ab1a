"""Pure-numpy reference kernels.

Same signatures as the compiled ``_ckernels`` module. Every array argument is
a C-contiguous float64 array; row kernels take 2-D ``(rows, width)`` views.
"""

import math

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def log_softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def layernorm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_bwd(g, xhat, rstd, gamma):
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    gx = g * gamma
    width = xhat.shape[1]
    dx = (gx - gx.mean(axis=1, keepdims=True)
          - xhat * (gx * xhat).sum(axis=1, keepdims=True) / width)
    return dx * rstd[:, None], dgamma, dbeta


def gelu_fwd(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    return 0.5 * x * (1.0 + t)


def gelu_bwd(x, g):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
    return g * (0.5 * (1.0 + t) + 0.5 * x * dt)
