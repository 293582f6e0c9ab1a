"""Differentiable tensor operations.

Elementwise binary ops broadcast numpy-style; their gradients are summed back
to each operand's shape.
"""

from __future__ import annotations

import numpy as np

from simmc_mm.errors import DegenerateInputError, ShapeError
from simmc_mm.numeric import kernels
from simmc_mm.numeric.tensor import Function, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ------------------------------------------------------------
class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "add")
        ctx.attrs["shapes"] = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx.attrs["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "sub")
        ctx.attrs["shapes"] = (a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx.attrs["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "mul")
        ctx.save(a, b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


class Div(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "div")
        if np.any(b == 0):
            raise DegenerateInputError("division by zero")
        ctx.save(a, b)
        return a / b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


class Neg(Function):
    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return (-g,)


class Exp(Function):
    @staticmethod
    def forward(ctx, a):
        y = np.exp(a)
        ctx.save(y)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        return (g * y,)


class Log(Function):
    @staticmethod
    def forward(ctx, a):
        if np.any(a <= 0):
            raise DegenerateInputError("log of a non-positive value")
        ctx.save(a)
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        return (g / a,)


class Sqrt(Function):
    @staticmethod
    def forward(ctx, a):
        if np.any(a < 0):
            raise DegenerateInputError("sqrt of a negative value")
        y = np.sqrt(a)
        ctx.save(y)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        if np.any(y == 0):
            raise DegenerateInputError("sqrt gradient at zero")
        return (g / (2.0 * y),)


class Tanh(Function):
    @staticmethod
    def forward(ctx, a):
        y = np.tanh(a)
        ctx.save(y)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        return (g * (1.0 - y * y),)


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


class Sigmoid(Function):
    @staticmethod
    def forward(ctx, a):
        y = _sigmoid(np.asarray(a))
        ctx.save(y)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        return (g * y * (1.0 - y),)


class Relu(Function):
    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return np.maximum(a, 0.0)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        return (g * (a > 0),)


class Gelu(Function):
    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return kernels.gelu(a)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        return (kernels.gelu_grad(a, g),)


# -- linear algebra and shape ---------------------------------------------
class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[0]):
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul: need at least 2-D operands, got {a.shape} and {b.shape}")
        ctx.save(a, b)
        return np.matmul(a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the batch dims into rows, one GEMM each way
            a2 = a.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            return (g @ b.T), a2.T @ g2
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Reshape(Function):
    @staticmethod
    def forward(ctx, a, shape):
        ctx.attrs["shape"] = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {a.shape} into {shape}") from None

    @staticmethod
    def backward(ctx, g):
        return (g.reshape(ctx.attrs["shape"]),)


class Transpose(Function):
    @staticmethod
    def forward(ctx, a, axes):
        ctx.attrs["axes"] = axes
        return np.ascontiguousarray(np.transpose(a, axes))

    @staticmethod
    def backward(ctx, g):
        inv = np.argsort(ctx.attrs["axes"])
        return (np.transpose(g, inv),)


class Sum(Function):
    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.attrs["shape"] = a.shape
        ctx.attrs["axis"] = axis
        ctx.attrs["keepdims"] = keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        shape = ctx.attrs["shape"]
        axis = ctx.attrs["axis"]
        if axis is not None and not ctx.attrs["keepdims"]:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)


class Index(Function):
    @staticmethod
    def forward(ctx, a, index):
        ctx.attrs["shape"] = a.shape
        ctx.attrs["index"] = index
        return np.array(a[index], copy=True)

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx.attrs["shape"])
        idx = ctx.attrs["index"]
        parts = idx if isinstance(idx, tuple) else (idx,)
        if all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts):
            out[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, idx, g)
        return (out,)


class Embedding(Function):
    """Row gather ``weight[ids]`` with scatter-add backward."""

    @staticmethod
    def forward(ctx, weight, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
            raise ShapeError(f"embedding ids out of range [0, {weight.shape[0]})")
        ctx.attrs["ids"] = ids
        ctx.attrs["shape"] = weight.shape
        return weight[ids]

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx.attrs["shape"])
        ids = ctx.attrs["ids"]
        np.add.at(out, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (out,)


class Concat(Function):
    @staticmethod
    def forward(ctx, *arrays, axis=0):
        ctx.attrs["sizes"] = [a.shape[axis] for a in arrays]
        ctx.attrs["axis"] = axis
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        axis = ctx.attrs["axis"]
        bounds = np.cumsum(ctx.attrs["sizes"])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


class Stack(Function):
    @staticmethod
    def forward(ctx, *arrays, axis=0):
        ctx.attrs["axis"] = axis
        return np.stack(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        axis = ctx.attrs["axis"]
        return tuple(np.take(g, i, axis=axis) for i in range(g.shape[axis]))


# -- normalisation ----------------------------------------------------------
class Softmax(Function):
    @staticmethod
    def forward(ctx, a, axis=-1):
        if a.ndim == 0 or a.shape[axis] == 0:
            raise ShapeError("softmax over an empty axis")
        moved = np.moveaxis(a, axis, -1)
        y = kernels.softmax_lastaxis(moved)
        ctx.save(y)
        ctx.attrs["axis"] = axis
        return np.moveaxis(y, -1, axis)

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        axis = ctx.attrs["axis"]
        gm = np.moveaxis(g, axis, -1)
        return (np.moveaxis(kernels.softmax_lastaxis_grad(y, gm), -1, axis),)


class LogSoftmax(Function):
    @staticmethod
    def forward(ctx, a):
        if a.ndim == 0 or a.shape[-1] == 0:
            raise ShapeError("log_softmax over an empty axis")
        y = kernels.log_softmax_lastaxis(a)
        ctx.save(y)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)


class LayerNorm(Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-5):
        if gamma.shape != (x.shape[-1],) or beta.shape != gamma.shape:
            raise ShapeError(f"layer_norm: width {x.shape[-1]} vs gamma {gamma.shape}")
        y, xhat, rstd = kernels.layernorm(x, gamma, beta, eps)
        ctx.save(xhat, rstd, gamma)
        return y

    @staticmethod
    def backward(ctx, g):
        xhat, rstd, gamma = ctx.saved
        dx, dgamma, dbeta = kernels.layernorm_grad(g, xhat, rstd, gamma)
        return dx, dgamma, dbeta


class CosineSimilarity(Function):
    """Cosine similarity along the last axis (broadcast over leading axes)."""

    @staticmethod
    def forward(ctx, u, v):
        if u.shape[-1] != v.shape[-1]:
            raise ShapeError(f"cosine_similarity: widths {u.shape} vs {v.shape}")
        nu = np.sqrt(np.sum(u * u, axis=-1))
        nv = np.sqrt(np.sum(v * v, axis=-1))
        if np.any(nu == 0) or np.any(nv == 0):
            raise DegenerateInputError("cosine similarity of a zero-norm vector")
        dot = np.sum(u * v, axis=-1)
        c = dot / (nu * nv)
        ctx.save(u, v, nu, nv, c)
        return c

    @staticmethod
    def backward(ctx, g):
        u, v, nu, nv, c = ctx.saved
        g = g[..., None]
        nu_, nv_, c_ = nu[..., None], nv[..., None], c[..., None]
        gu = g * (v / (nu_ * nv_) - c_ * u / (nu_ * nu_))
        gv = g * (u / (nu_ * nv_) - c_ * v / (nv_ * nv_))
        return _unbroadcast(gu, u.shape), _unbroadcast(gv, v.shape)


# -- functional wrappers ----------------------------------------------------
def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def sqrt(a) -> Tensor:
    return Sqrt.apply(a)


def tanh(a) -> Tensor:
    return Tanh.apply(a)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(a)


def relu(a) -> Tensor:
    return Relu.apply(a)


def gelu(a) -> Tensor:
    return Gelu.apply(a)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes) -> Tensor:
    return Transpose.apply(a, axes=tuple(axes))


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def index(a, idx) -> Tensor:
    return Index.apply(a, index=idx)


def embedding(weight, ids) -> Tensor:
    return Embedding.apply(weight, ids=ids)


def concat(tensors, axis=0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors, axis=0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def softmax(a, axis=-1) -> Tensor:
    return Softmax.apply(a, axis=axis)


def log_softmax(a) -> Tensor:
    return LogSoftmax.apply(a)


def layer_norm(x, gamma, beta, eps=1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def cosine_similarity(u, v) -> Tensor:
    """Cosine of the angle between ``u`` and ``v`` along the last axis.

    Raises :class:`DegenerateInputError` for a zero-norm input rather than
    returning 0.
    """
    return CosineSimilarity.apply(u, v)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight (+ bias)`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)
