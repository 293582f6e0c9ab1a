import numpy as np
import pytest

from simmc_mm.numeric import _kernels_py, kernels

ckernels = pytest.importorskip("simmc_mm.numeric._ckernels")


@pytest.fixture
def rows():
    rng = np.random.default_rng(0)
    return rng.normal(scale=3.0, size=(37, 19)), rng.normal(size=(37, 19))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_softmax_backends_agree(rows):
    x, g = rows
    y_py = _kernels_py.softmax_fwd(x)
    y_c = ckernels.softmax_fwd(x)
    np.testing.assert_allclose(y_c, y_py, rtol=0, atol=1e-14)
    np.testing.assert_allclose(ckernels.softmax_bwd(y_py, g), _kernels_py.softmax_bwd(y_py, g),
                               rtol=0, atol=1e-13)
    np.testing.assert_allclose(ckernels.log_softmax_fwd(x), _kernels_py.log_softmax_fwd(x),
                               rtol=0, atol=1e-12)


def test_layernorm_backends_agree(rows):
    x, g = rows
    gamma = np.linspace(0.5, 1.5, x.shape[1])
    beta = np.linspace(-1, 1, x.shape[1])
    py = _kernels_py.layernorm_fwd(x, gamma, beta, 1e-5)
    c = ckernels.layernorm_fwd(x, gamma, beta, 1e-5)
    for a, b in zip(py, c):
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-12)
    py_b = _kernels_py.layernorm_bwd(g, py[1], py[2], gamma)
    c_b = ckernels.layernorm_bwd(g, py[1], py[2], gamma)
    for a, b in zip(py_b, c_b):
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-11)


def test_gelu_backends_agree(rows):
    x, g = rows
    np.testing.assert_allclose(ckernels.gelu_fwd(x), _kernels_py.gelu_fwd(x), rtol=0, atol=1e-13)
    np.testing.assert_allclose(ckernels.gelu_bwd(x, g), _kernels_py.gelu_bwd(x, g), rtol=0, atol=1e-13)


def test_use_backend_switch(rows):
    x, _ = rows
    before = kernels.BACKEND
    try:
        kernels.use_backend("python")
        a = kernels.softmax_lastaxis(x)
        kernels.use_backend("cython")
        b = kernels.softmax_lastaxis(x)
    finally:
        kernels.use_backend(before)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
