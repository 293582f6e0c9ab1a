"""Shared optimisation loop pieces: seeded streams, AdamW + warmup schedule,
last-good snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from simmc_mm.errors import ConfigError, NonFiniteError, TrainingAbort
from simmc_mm.numeric import AdamW, ParameterSet, Tensor, WarmupLinearSchedule, backward

# derived-stream ids; one seed drives everything, each consumer gets its own generator
STREAMS = {
    "itm.init": 10, "itm.sample": 11, "btm.init": 12, "btm.sample": 13,
    "disamb.init": 20, "disamb.sample": 21, "coref.init": 30, "coref.sample": 31,
    "gen.init": 40, "gen.sample": 41, "eval": 90,
}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name]])


@dataclass
class OptimConfig:
    epochs: int = 10
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


class Trainer:
    """Owns the optimiser state for one ParameterSet.

    A non-finite loss or gradient restores the values snapshotted at the last
    :meth:`checkpoint` and raises :class:`TrainingAbort` carrying them as
    ``last_good``.
    """

    def __init__(self, params: ParameterSet, cfg: OptimConfig, steps_per_epoch: int):
        cfg.validate()
        self.params = params
        self.cfg = cfg
        self.opt = AdamW(params, weight_decay=cfg.weight_decay)
        total = max(1, cfg.epochs * steps_per_epoch)
        self.schedule = WarmupLinearSchedule(cfg.lr, total, cfg.warmup_fraction)
        self.last_good = {k: v.copy() for k, v in params.arrays().items()}

    def step(self, loss_fn) -> float:
        self.params.zero_grad()
        try:
            loss = loss_fn()
            backward(loss)
            self.opt.step(self.schedule.next())
        except NonFiniteError as exc:
            self.params.load_arrays(self.last_good)
            abort = TrainingAbort(f"training aborted: {exc}")
            abort.last_good = self.last_good
            raise abort from exc
        return float(loss.data)

    def checkpoint(self) -> None:
        self.last_good = {k: v.copy() for k, v in self.params.arrays().items()}


def minibatches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)
