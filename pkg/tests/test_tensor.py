"""Autodiff engine tests: adjoints against central differences, op contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbnn import tensor as T
from tbnn.errors import NonFiniteError
from tbnn.tensor import Tensor


def rel_err(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def check_against_fd(loss_fn, params, tol=1e-6):
    g = T.grad(loss_fn, params)
    fd = T.finite_diff_grad(loss_fn, params)
    for k in params:
        assert rel_err(g[k], fd[k]) < tol, k


def test_square_scalar():
    g = T.grad(lambda p: T.square(p["x"]), {"x": np.array(3.0)})
    assert g["x"] == pytest.approx(6.0)


def test_sum_gives_ones():
    w = np.random.default_rng(0).normal(size=(3, 4))
    g = T.grad(lambda p: T.tsum(p["w"]), {"w": w})
    np.testing.assert_array_equal(g["w"], np.ones_like(w))


def test_finite_diff_square():
    fd = T.finite_diff_grad(lambda p: T.square(p["x"]), {"x": np.array(3.0)}, eps=1e-4)
    assert fd["x"] == pytest.approx(6.0, abs=1e-7)


def test_finite_diff_abs_at_zero_symmetric():
    fd = T.finite_diff_grad(lambda p: T.absval(p["x"]), {"x": np.array(0.0)}, eps=1e-4)
    assert fd["x"] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_elementwise_binary_adjoints(op):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(4, 3))
    fn = getattr(T, op)

    def loss(p):
        return T.tsum(T.square(fn(p["a"], p["b"])))

    check_against_fd(loss, {"a": a, "b": b})


def test_bias_broadcast_adjoint():
    rng = np.random.default_rng(2)
    params = {"w": rng.normal(size=(5, 3)), "b": rng.normal(size=(3,))}
    check_against_fd(lambda p: T.tsum(T.square(T.add(p["w"], p["b"]))), params)


@given(st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_unbroadcast_add_matches_fd(rows, cols):
    rng = np.random.default_rng(rows * 7 + cols)
    params = {"a": rng.normal(size=(rows, cols)), "b": rng.normal(size=(1, cols))}
    check_against_fd(lambda p: T.tsum(T.square(T.add(p["a"], p["b"]))), params)


@pytest.mark.parametrize("op", [T.relu, T.tanh, T.sigmoid, T.square])
def test_unary_adjoints(op):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6,)) + 0.1  # keep relu inputs off the kink
    check_against_fd(lambda p: T.tsum(T.square(op(p["x"]))), {"x": x})


def test_log_adjoint():
    x = np.abs(np.random.default_rng(4).normal(size=(5,))) + 0.5
    check_against_fd(lambda p: T.tsum(T.square(T.log(p["x"]))), {"x": x})


def test_matmul_transpose_adjoints():
    rng = np.random.default_rng(5)
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))}
    check_against_fd(
        lambda p: T.tsum(T.square(T.matmul(p["a"], p["b"]))), params)
    check_against_fd(
        lambda p: T.tsum(T.square(T.matmul(T.transpose(p["b"]), T.transpose(p["a"])))), params)


def test_conv2d_adjoints_both_paddings():
    rng = np.random.default_rng(6)
    for pad in (0, 1):
        params = {"x": rng.normal(size=(2, 2, 5, 5)), "w": rng.normal(size=(3, 2, 3, 3))}
        check_against_fd(
            lambda p: T.tsum(T.square(T.conv2d(p["x"], p["w"], pad=pad))), params)


def test_conv2d_rejects_other_padding():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), pad=2)


def test_maxpool_adjoint_and_tie_rule():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 6, 6))
    check_against_fd(lambda p: T.tsum(T.square(T.maxpool2(p["x"]))), {"x": x})

    tied = np.zeros((1, 1, 2, 2))
    leaf = Tensor(tied, requires_grad=True)
    out = T.tsum(T.maxpool2(leaf))
    out.backward()
    # all four entries tie; the gradient must land on the first in scan order
    expect = np.zeros((1, 1, 2, 2))
    expect[0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(leaf.grad, expect)


def test_maxpool_adjoint_mass_conserved():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(3, 2, 8, 8))
    leaf = Tensor(x, requires_grad=True)
    out = T.maxpool2(leaf)
    up = rng.normal(size=out.shape)
    T.tsum(T.mul(out, Tensor(up))).backward()
    assert leaf.grad.sum() == pytest.approx(up.sum(), abs=1e-12)
    # gradient lands only on argmax positions: nonzeros <= one per window
    assert np.count_nonzero(leaf.grad) <= up.size


def test_log_softmax_rows_normalize():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(7, 10)) * 5
    out = T.log_softmax(Tensor(x))
    lse = np.log(np.exp(out.data).sum(axis=1))
    assert np.max(np.abs(lse)) < 1e-10


def test_log_softmax_gather_adjoints():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4, 5))
    idx = np.array([0, 3, 2, 4])

    def loss(p):
        return T.scale(T.tsum(T.gather(T.log_softmax(p["x"]), idx)), -1.0)

    check_against_fd(loss, {"x": x})


def test_gather_shape_validation():
    with pytest.raises(ValueError):
        T.gather(Tensor(np.zeros((3, 2))), np.array([0, 1]))


def test_mean_and_scale():
    x = np.arange(6.0).reshape(2, 3)
    assert T.tmean(Tensor(x)).item() == pytest.approx(2.5)
    g = T.grad(lambda p: T.scale(T.tmean(p["x"]), 12.0), {"x": x})
    np.testing.assert_allclose(g["x"], np.full((2, 3), 2.0))


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        Tensor(np.zeros(3), requires_grad=True).backward()


def test_nonfinite_error_names_node():
    x = np.array([1.0, 0.0])
    with pytest.raises(NonFiniteError) as err:
        T.grad(lambda p: T.tsum(T.log(p["x"])), {"x": x})
    assert err.value.node == "log"


def test_nonfinite_leaf_rejected():
    with pytest.raises(NonFiniteError):
        T.grad(lambda p: T.tsum(p["x"]), {"x": np.array([np.nan])})


def test_untouched_params_get_zero_grad():
    g = T.grad(lambda p: T.square(p["a"]), {"a": np.array(2.0), "b": np.zeros(3)})
    np.testing.assert_array_equal(g["b"], np.zeros(3))


def test_diamond_graph_accumulates():
    # f(x) = x*x + x*x through two separate mul nodes: grad 4x
    def loss(p):
        return T.add(T.mul(p["x"], p["x"]), T.mul(p["x"], p["x"]))

    g = T.grad(loss, {"x": np.array(1.5)})
    assert g["x"] == pytest.approx(6.0)
