"""Backend selection for the row kernels.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. ``SIMMC_MM_KERNELS=python`` forces the fallback.
"""

import os

import numpy as np

from simmc_mm.numeric import _kernels_py

_forced = os.environ.get("SIMMC_MM_KERNELS", "").lower()

if _forced == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from simmc_mm.numeric import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py
        BACKEND = "python"


# Kernels where the compiled loop beats numpy (see benchmarks/bench_kernels.py).
# The rest lean on exp/tanh, which numpy vectorises better than per-element libc calls.
COMPILED_WINS = frozenset({"softmax_bwd", "layernorm_fwd", "layernorm_bwd"})


def _k(name):
    return getattr(_impl if name in COMPILED_WINS else _kernels_py, name)


def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax_lastaxis(x):
    return _k("softmax_fwd")(_rows(x)).reshape(x.shape)


def softmax_lastaxis_grad(y, g):
    return _k("softmax_bwd")(_rows(y), _rows(g)).reshape(y.shape)


def log_softmax_lastaxis(x):
    return _k("log_softmax_fwd")(_rows(x)).reshape(x.shape)


def layernorm(x, gamma, beta, eps):
    y, xhat, rstd = _k("layernorm_fwd")(_rows(x), gamma, beta, eps)
    return y.reshape(x.shape), xhat, rstd


def layernorm_grad(g, xhat, rstd, gamma):
    dx, dgamma, dbeta = _k("layernorm_bwd")(_rows(g), xhat, rstd, gamma)
    return dx.reshape(g.shape), dgamma, dbeta


def gelu(x):
    if x.ndim == 0:
        return _kernels_py.gelu_fwd(x)
    return _k("gelu_fwd")(_rows(x)).reshape(x.shape)


def gelu_grad(x, g):
    if x.ndim == 0:
        return _kernels_py.gelu_bwd(x, g)
    return _k("gelu_bwd")(_rows(x), _rows(g)).reshape(x.shape)


def use_backend(name):
    """Switch backend at runtime (benchmarks and equivalence tests)."""
    global _impl, BACKEND
    if name == "python":
        _impl = _kernels_py
    elif name == "cython":
        from simmc_mm.numeric import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name
