"""Time the compiled row kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 4096] [--width 96] [--repeat 20]

Prints one line per kernel with the best-of-N time for each backend, the
speedup, and the max absolute difference between the two outputs.
"""

import argparse
import timeit

import numpy as np

from simmc_mm.numeric import _kernels_py as py

try:
    from simmc_mm.numeric import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def cases(rows, width, rng):
    x = rng.normal(size=(rows, width))
    g = rng.normal(size=(rows, width))
    gamma = rng.normal(size=width)
    beta = rng.normal(size=width)
    y = py.softmax_fwd(x)
    _, xhat, rstd = py.layernorm_fwd(x, gamma, beta, 1e-5)
    return {
        "softmax_fwd": (x,),
        "softmax_bwd": (y, g),
        "log_softmax_fwd": (x,),
        "layernorm_fwd": (x, gamma, beta, 1e-5),
        "layernorm_bwd": (g, xhat, rstd, gamma),
        "gelu_fwd": (x,),
        "gelu_bwd": (x, g),
    }


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=4096)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--repeat", type=int, default=20)
    a = p.parse_args(argv)
    if cy is None:
        print("compiled kernels not built; run `python setup.py build_ext --inplace` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, args in cases(a.rows, a.width, rng).items():
        f_py = getattr(py, name)
        t_py = min(timeit.repeat(lambda: f_py(*args), number=1, repeat=a.repeat)) * 1e3
        if cy is None:
            print(f"{name:<16} {t_py:>10.3f} {'-':>10} {'-':>8} {'-':>11}")
            continue
        f_cy = getattr(cy, name)
        t_cy = min(timeit.repeat(lambda: f_cy(*args), number=1, repeat=a.repeat)) * 1e3
        diff = np.max(np.abs(np.asarray(_first(f_py(*args))) - np.asarray(_first(f_cy(*args)))))
        print(f"{name:<16} {t_py:>10.3f} {t_cy:>10.3f} {t_py / t_cy:>7.2f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
