# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row kernels (softmax, layernorm, GELU).

Drop-in replacement for ``_kernels_py``; selected by ``kernels.py`` at import.
Row kernels fuse the reductions the numpy version spreads over several
temporaries, which is where small-batch training time goes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh

cnp.import_array()

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            y[i, j] = exp(x[i, j] - m)
            s += y[i, j]
        for j in range(k):
            y[i, j] = y[i, j] / s
    return out


def softmax_bwd(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], k = y.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot += g[i, j] * y[i, j]
        for j in range(k):
            dx[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def log_softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, s, lse
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            s += exp(x[i, j] - m)
        lse = log(s)
        for j in range(k):
            y[i, j] = x[i, j] - m - lse
    return out


def layernorm_fwd(const double[:, ::1] x, const double[::1] gamma,
                  const double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    xhat_arr = np.empty((n, k), dtype=np.float64)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mu, var, d, r
    for i in range(n):
        mu = 0.0
        for j in range(k):
            mu += x[i, j]
        mu /= k
        var = 0.0
        for j in range(k):
            d = x[i, j] - mu
            var += d * d
        var /= k
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(k):
            d = (x[i, j] - mu) * r
            xhat[i, j] = d
            y[i, j] = d * gamma[j] + beta[j]
    return out, xhat_arr, rstd_arr


def layernorm_bwd(const double[:, ::1] g, const double[:, ::1] xhat,
                  const double[::1] rstd, const double[::1] gamma):
    cdef Py_ssize_t n = g.shape[0], k = g.shape[1], i, j
    dx_arr = np.empty((n, k), dtype=np.float64)
    dgamma_arr = np.zeros(k, dtype=np.float64)
    dbeta_arr = np.zeros(k, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double s1, s2, gx
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(k):
            gx = g[i, j] * gamma[j]
            s1 += gx
            s2 += gx * xhat[i, j]
            dgamma[j] += g[i, j] * xhat[i, j]
            dbeta[j] += g[i, j]
        s1 /= k
        s2 /= k
        for j in range(k):
            dx[i, j] = (g[i, j] * gamma[j] - s1 - xhat[i, j] * s2) * rstd[i]
    return dx_arr, dgamma_arr, dbeta_arr


def gelu_fwd(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double v
    for i in range(n):
        for j in range(k):
            v = x[i, j]
            y[i, j] = 0.5 * v * (1.0 + tanh(GELU_C * (v + GELU_A * v * v * v)))
    return out


def gelu_bwd(const double[:, ::1] x, const double[:, ::1] g):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double v, v2, t, dt
    for i in range(n):
        for j in range(k):
            v = x[i, j]
            v2 = v * v
            t = tanh(GELU_C * (v + GELU_A * v2 * v))
            dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v2)
            dx[i, j] = g[i, j] * (0.5 * (1.0 + t) + 0.5 * v * dt)
    return out
