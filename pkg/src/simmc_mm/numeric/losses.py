"""Classification losses: cross-entropy over logits, BCE over probabilities."""

from __future__ import annotations

import enum

import numpy as np

from simmc_mm.errors import LabelError, ShapeError
from simmc_mm.numeric import kernels
from simmc_mm.numeric.ops import _sigmoid
from simmc_mm.numeric.tensor import Function, Tensor

BCE_EPS = 1e-7


class LossKind(str, enum.Enum):
    CE = "CE"
    BCE = "BCE"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        return None


class CrossEntropy(Function):
    """Mean negative log-likelihood of integer targets under softmax(logits)."""

    @staticmethod
    def forward(ctx, logits, targets):
        logp = kernels.log_softmax_lastaxis(logits)
        n = logp.shape[0]
        picked = logp[np.arange(n), targets]
        ctx.save(logp)
        ctx.attrs["targets"] = targets
        return np.asarray(-picked.mean())

    @staticmethod
    def backward(ctx, g):
        (logp,) = ctx.saved
        targets = ctx.attrs["targets"]
        n = logp.shape[0]
        grad = np.exp(logp)
        grad[np.arange(n), targets] -= 1.0
        return (grad * (g / n),)


class BinaryCrossEntropy(Function):
    """Mean BCE of probabilities clamped to ``[eps, 1 - eps]``.

    The clamp has zero gradient outside the interval, like any clip.
    """

    @staticmethod
    def forward(ctx, p, y, eps=BCE_EPS):
        pc = np.clip(p, eps, 1.0 - eps)
        ctx.save(p, pc, y)
        ctx.attrs["eps"] = eps
        return np.asarray(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean())

    @staticmethod
    def backward(ctx, g):
        p, pc, y = ctx.saved
        eps = ctx.attrs["eps"]
        inside = (p >= eps) & (p <= 1.0 - eps)
        d = (-(y / pc) + (1.0 - y) / (1.0 - pc)) * inside
        return (d * (g / p.size), None)


class BinaryCrossEntropyWithLogits(Function):
    """BCE of ``sigmoid(z)`` computed from the logit, stable for any ``|z|``."""

    @staticmethod
    def forward(ctx, z, y):
        # log(1 + exp(-|z|)) + max(z, 0) - y z
        loss = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - y * z
        ctx.save(z, y)
        return np.asarray(loss.mean())

    @staticmethod
    def backward(ctx, g):
        z, y = ctx.saved
        return ((_sigmoid(z) - y) * (g / z.size), None)


def _targets(target, k: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(target))
    if t.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise LabelError(f"CE targets must be integers, got {t!r}")
        t = t.astype(np.int64)
    if np.any(t < 0) or np.any(t >= k):
        raise LabelError(f"CE target out of range [0, {k}): {t.tolist()}")
    return t.astype(np.int64)


def _binary_targets(target) -> np.ndarray:
    y = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError(f"BCE targets must be 0 or 1, got {y.tolist()}")
    return y


def cross_entropy(logits: Tensor, target) -> Tensor:
    """CE over ``(n, K)`` logits (a single ``(K,)`` row is promoted)."""
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(f"cross_entropy expects (n, K) logits, got {logits.shape}")
    t = _targets(target, logits.shape[1])
    if t.shape[0] != logits.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {logits.shape[0]} rows")
    return CrossEntropy.apply(logits, targets=t)


def binary_cross_entropy(prob: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    y = _binary_targets(target)
    p = prob if prob.ndim else prob.reshape(1)
    if y.shape != p.shape:
        raise ShapeError(f"BCE: probabilities {p.shape} vs targets {y.shape}")
    if np.any(p.data < 0.0) or np.any(p.data > 1.0):
        raise LabelError("BCE input must be a probability in [0, 1]")
    return BinaryCrossEntropy.apply(p, y, eps=eps)


def bce_with_logits(logit: Tensor, target) -> Tensor:
    y = _binary_targets(target)
    z = logit if logit.ndim else logit.reshape(1)
    if y.shape != z.shape:
        raise ShapeError(f"BCE: logits {z.shape} vs targets {y.shape}")
    return BinaryCrossEntropyWithLogits.apply(z, y)


def loss(logits_or_prob: Tensor, target, kind: LossKind | str) -> Tensor:
    """Dispatch to CE (logits, integer target) or BCE (probability, 0/1)."""
    kind = LossKind(kind)
    if kind is LossKind.CE:
        return cross_entropy(logits_or_prob, target)
    return binary_cross_entropy(logits_or_prob, target)
