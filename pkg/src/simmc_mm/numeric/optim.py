"""Parameters, AdamW and the linear warmup/decay learning-rate schedule."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from simmc_mm.errors import ConfigError, NonFiniteError, ShapeError
from simmc_mm.numeric.tensor import Tensor

INIT_STD = 0.02


class ParameterSet:
    """Ordered ``name -> Tensor`` mapping of trainable parameters."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (params or {}).items():
            self[name] = t

    def __setitem__(self, name: str, value) -> None:
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def update(self, other: "ParameterSet", prefix: str = "") -> None:
        for name, t in other.items():
            self[prefix + name] = t

    def subset(self, prefix: str) -> "ParameterSet":
        """View of the parameters under ``prefix`` with the prefix stripped."""
        out = ParameterSet()
        for name, t in self._params.items():
            if name.startswith(prefix):
                out._params[name[len(prefix):]] = t
        return out

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: Tensor(v.data.copy()) for k, v in self._params.items()})

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite values in place from ``arrays`` (shapes must agree)."""
        for name, arr in arrays.items():
            if name not in self._params:
                if strict:
                    raise ShapeError(f"unexpected parameter {name!r}")
                continue
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name!r}: expected {t.shape}, got {arr.shape}")
            t.data = arr.copy()
        if strict:
            missing = set(self._params) - set(arrays)
            if missing:
                raise ShapeError(f"missing parameters: {sorted(missing)}")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}


def normal_init(rng: np.random.Generator, *shape: int, std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class AdamW:
    """Adam with decoupled weight decay.

    Per call: ``p -= lr * wd * p`` then the bias-corrected Adam update. The
    step counter is shared by all parameters of one instance.
    """

    def __init__(self, params: ParameterSet, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        adamw_step(self, lr)

    def zero_grad(self) -> None:
        self.params.zero_grad()


def adamw_step(opt: AdamW, lr: float, betas=None, eps=None, weight_decay=None) -> None:
    """Apply one AdamW update to every parameter of ``opt``.

    Raises :class:`NonFiniteError` naming the first parameter whose gradient
    holds NaN/Inf; in that case nothing is modified.
    """
    b1, b2 = betas if betas is not None else opt.betas
    eps = opt.eps if eps is None else eps
    wd = opt.weight_decay if weight_decay is None else weight_decay
    for name, p in opt.params.items():
        if p._grad is not None and not np.isfinite(p._grad).all():
            bad = int(np.size(p._grad) - np.isfinite(p._grad).sum())
            raise NonFiniteError(f"non-finite gradient in parameter {name!r} "
                                 f"({bad} of {p.size} entries, step {opt.step_count})")
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in opt.params.items():
        g = p.grad
        if wd:
            p.data = p.data * (1.0 - lr * wd)
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def warmup_linear_lr(step: int, warmup_steps: int, total_steps: int, base_lr: float) -> float:
    """Linear ramp 0 -> base_lr over warmup, then linear decay to 0 at total."""
    if warmup_steps <= 0 or warmup_steps >= total_steps:
        raise ConfigError(f"need 0 < warmup_steps ({warmup_steps}) < total_steps ({total_steps})")
    if step < 0 or step > total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


class WarmupLinearSchedule:
    """Stateful wrapper: ``next()`` gives the rate for the upcoming update."""

    def __init__(self, base_lr: float, total_steps: int, warmup_fraction: float = 0.1):
        self.warmup = max(1, int(math.floor(warmup_fraction * total_steps)))
        self.total = max(total_steps, self.warmup + 1)
        self.base_lr = base_lr
        self.done = 0

    def next(self) -> float:
        self.done = min(self.done + 1, self.total)
        return warmup_linear_lr(self.done, self.warmup, self.total, self.base_lr)
