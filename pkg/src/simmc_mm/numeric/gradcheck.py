"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from simmc_mm.numeric.tensor import Tensor, backward

# gradients smaller than this are compared in absolute terms
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                 entries: np.ndarray | None = None) -> np.ndarray:
    """d fn() / d t by central differences at ``entries`` (flat indices)."""
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size) if entries is None else entries
    out = np.zeros(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> dict[str, float]:
    """Compare backward() against central differences for each tensor.

    ``fn`` must rebuild the scalar output from the tensors' current values.
    With ``max_entries`` only that many randomly chosen entries per tensor are
    probed. Returns ``{tensor name or index: max relative error}``.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    out = fn()
    backward(out)
    report = {}
    for k, t in enumerate(tensors):
        if max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            entries = np.arange(t.size)
        analytic = t.grad.reshape(-1)[entries].copy()
        numeric = numeric_grad(fn, t, h=h, entries=entries)
        report[t.name or str(k)] = relative_error(analytic, numeric)
    return report
