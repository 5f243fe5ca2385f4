"""Convolution/pooling kernels against direct-loop references, and backend
agreement between the numpy and compiled implementations."""

import numpy as np
import pytest

import oracles
from tbnn import _kernels
from tbnn._kernels import cython_available, numpy_impl


def _cases():
    rng = np.random.default_rng(42)
    return [
        (rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 3, 3)), 1),
        (rng.normal(size=(1, 1, 5, 4)), rng.normal(size=(2, 1, 3, 3)), 0),
        (rng.normal(size=(3, 2, 4, 4)), rng.normal(size=(1, 2, 3, 3)), 1),
    ]


@pytest.mark.parametrize("case", range(3))
def test_conv_forward_matches_loops(case):
    x, w, pad = _cases()[case]
    got = _kernels.conv2d_forward(x, w, pad)
    np.testing.assert_allclose(got, oracles.conv2d(x, w, pad), atol=1e-12)


def test_maxpool_matches_loops():
    x = np.random.default_rng(1).normal(size=(2, 3, 8, 8))
    got, got_idx = _kernels.maxpool2_forward(x)
    want, want_idx = oracles.maxpool2(x)
    np.testing.assert_array_equal(got, want)
    np.testing.assert_array_equal(got_idx, want_idx)


def test_maxpool_tie_first_index():
    x = np.zeros((1, 1, 2, 2))
    _, idx = _kernels.maxpool2_forward(x)
    assert idx[0, 0, 0, 0] == 0


needs_cython = pytest.mark.skipif(not cython_available(),
                                  reason="compiled extension not built")


@needs_cython
@pytest.mark.parametrize("case", range(3))
def test_backends_agree_conv(case):
    from tbnn._kernels import cython_impl

    x, w, pad = _cases()[case]
    np.testing.assert_allclose(numpy_impl.conv2d_forward(x, w, pad),
                               cython_impl.conv2d_forward(x, w, pad), atol=1e-10)
    g = np.random.default_rng(case).normal(
        size=numpy_impl.conv2d_forward(x, w, pad).shape)
    np.testing.assert_allclose(numpy_impl.conv2d_backward_x(g, w, pad),
                               cython_impl.conv2d_backward_x(g, w, pad), atol=1e-10)
    kh, kw = w.shape[2], w.shape[3]
    np.testing.assert_allclose(numpy_impl.conv2d_backward_w(x, g, kh, kw, pad),
                               cython_impl.conv2d_backward_w(x, g, kh, kw, pad),
                               atol=1e-10)


@needs_cython
def test_backends_agree_pool():
    from tbnn._kernels import cython_impl

    x = np.random.default_rng(3).normal(size=(4, 2, 10, 10))
    pn, in_ = numpy_impl.maxpool2_forward(x)
    pc, ic = cython_impl.maxpool2_forward(x)
    np.testing.assert_array_equal(pn, pc)
    np.testing.assert_array_equal(in_, ic)
    g = np.random.default_rng(4).normal(size=pn.shape)
    np.testing.assert_array_equal(numpy_impl.maxpool2_backward(g, in_, 10, 10),
                                  cython_impl.maxpool2_backward(g, ic, 10, 10))


def test_backend_tag_is_valid():
    assert _kernels.BACKEND in ("numpy", "cython", "hybrid")
