"""Minimal float64 tensor library: autograd ops, losses, AdamW, LR schedule."""

from simmc_mm.numeric.kernels import BACKEND
from simmc_mm.numeric.losses import (
    LossKind,
    bce_with_logits,
    binary_cross_entropy,
    cross_entropy,
    loss,
)
from simmc_mm.numeric.ops import (
    add,
    concat,
    cosine_similarity,
    embedding,
    exp,
    gelu,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    transpose,
)
from simmc_mm.numeric.optim import (
    AdamW,
    ParameterSet,
    WarmupLinearSchedule,
    adamw_step,
    normal_init,
    warmup_linear_lr,
)
from simmc_mm.numeric.tensor import ComputeGraph, Tensor, backward, no_grad

__all__ = [
    "BACKEND", "AdamW", "ComputeGraph", "LossKind", "ParameterSet", "Tensor",
    "WarmupLinearSchedule", "adamw_step", "add", "backward", "bce_with_logits",
    "binary_cross_entropy", "concat", "cosine_similarity", "cross_entropy",
    "embedding", "exp", "gelu", "layer_norm", "linear", "log", "log_softmax",
    "loss", "matmul", "mean", "mul", "no_grad", "normal_init", "relu", "reshape",
    "sigmoid", "softmax", "stack", "sub", "tanh", "transpose", "warmup_linear_lr",
]
