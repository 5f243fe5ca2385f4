"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Each operation builds a node holding its output, its parents, and a closure
that scatters the output adjoint back to the parents. ``Tensor.backward``
walks the graph in reverse topological order. Every operation validates its
output for finiteness so overflows raise ``NonFiniteError`` at the node that
produced them instead of surfacing later as silent NaNs.

Only the operations needed by the models here are provided: 2-D matmul,
stride-1 convolution with zero padding 0 or 1, 2x2 max pooling, elementwise
arithmetic with bias-style broadcasting, and a few scalar reductions.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import _kernels
from .errors import NonFiniteError

Array = np.ndarray
ParamTree = dict[str, Array]


def _as_f64(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward: Callable[[], None] | None = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.shape})"

    def _accumulate(self, g: Array) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep seeding d(self)/d(self) = 1. Scalar outputs only."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # Operator sugar used by model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _new(data: Array, parents: Iterable[Tensor], op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor(data)
    prev = tuple(p for p in parents if isinstance(p, Tensor))
    out._prev = prev
    out.requires_grad = any(p.requires_grad for p in prev)
    out.name = op
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum the adjoint over axes that broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _new(a.data + b.data, (a, b), "add")

    def _backward():
        a._accumulate(_unbroadcast(out.grad, a.data.shape))
        b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out._backward = _backward
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _new(a.data - b.data, (a, b), "sub")

    def _backward():
        a._accumulate(_unbroadcast(out.grad, a.data.shape))
        b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _new(a.data * b.data, (a, b), "mul")

    def _backward():
        a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = _backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _new(a.data * s, (a,), "scale")

    def _backward():
        a._accumulate(out.grad * s)

    out._backward = _backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.ndim}-D and {b.data.ndim}-D")
    out = _new(a.data @ b.data, (a, b), "matmul")

    def _backward():
        a._accumulate(out.grad @ b.data.T)
        b._accumulate(a.data.T @ out.grad)

    out._backward = _backward
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    out = _new(np.ascontiguousarray(a.data.T), (a,), "transpose")

    def _backward():
        a._accumulate(out.grad.T)

    out._backward = _backward
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _new(np.ascontiguousarray(a.data.reshape(shape)), (a,), "reshape")

    def _backward():
        a._accumulate(out.grad.reshape(a.data.shape))

    out._backward = _backward
    return out


def conv2d(x: Tensor, w: Tensor, pad: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] with filters [O,C,kh,kw], stride 1."""
    if pad not in (0, 1):
        raise ValueError(f"conv2d supports padding 0 or 1, got {pad}")
    out = _new(_kernels.conv2d_forward(x.data, w.data, pad), (x, w), "conv2d")
    kh, kw = w.data.shape[2], w.data.shape[3]

    def _backward():
        x._accumulate(_kernels.conv2d_backward_x(out.grad, w.data, pad))
        w._accumulate(_kernels.conv2d_backward_w(x.data, out.grad, kh, kw, pad))

    out._backward = _backward
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties keep the first element row-major."""
    pooled, idx = _kernels.maxpool2_forward(x.data)
    out = _new(pooled, (x,), "maxpool2")
    h, w = x.data.shape[2], x.data.shape[3]

    def _backward():
        x._accumulate(_kernels.maxpool2_backward(out.grad, idx, h, w))

    out._backward = _backward
    return out


def relu(a: Tensor) -> Tensor:
    out = _new(np.maximum(a.data, 0.0), (a,), "relu")

    def _backward():
        a._accumulate(out.grad * (a.data > 0.0))

    out._backward = _backward
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = _new(t, (a,), "tanh")

    def _backward():
        a._accumulate(out.grad * (1.0 - t * t))

    out._backward = _backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    # Stable on both tails.
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = _new(s, (a,), "sigmoid")

    def _backward():
        a._accumulate(out.grad * s * (1.0 - s))

    out._backward = _backward
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _new(ls, (a,), "log_softmax")

    def _backward():
        p = np.exp(ls)
        a._accumulate(out.grad - p * out.grad.sum(axis=axis, keepdims=True))

    out._backward = _backward
    return out


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = _new(np.asarray(a.data.sum(axis=axis)), (a,), "sum")

    def _backward():
        g = out.grad
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    out._backward = _backward
    return out


def tmean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.data.size)


def square(a: Tensor) -> Tensor:
    out = _new(a.data * a.data, (a,), "square")

    def _backward():
        a._accumulate(out.grad * 2.0 * a.data)

    out._backward = _backward
    return out


def absval(a: Tensor) -> Tensor:
    out = _new(np.abs(a.data), (a,), "abs")

    def _backward():
        # Subgradient 0 at the kink.
        a._accumulate(out.grad * np.sign(a.data))

    out._backward = _backward
    return out


def log(a: Tensor) -> Tensor:
    out = _new(np.log(a.data), (a,), "log")

    def _backward():
        a._accumulate(out.grad / a.data)

    out._backward = _backward
    return out


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = a[i, index[i]]."""
    idx = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ValueError(f"gather expects [n,k] tensor and [n] index, got {a.shape} and {idx.shape}")
    rows = np.arange(a.data.shape[0])
    out = _new(a.data[rows, idx].copy(), (a,), "gather")

    def _backward():
        g = np.zeros_like(a.data)
        np.add.at(g, (rows, idx), out.grad)
        a._accumulate(g)

    out._backward = _backward
    return out


def grad(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: ParamTree) -> ParamTree:
    """Gradient of a scalar-valued function of named parameter arrays.

    ``loss_fn`` receives a dict of leaf Tensors keyed like ``params`` and must
    return a scalar Tensor. Parameters the loss never touches get zero
    gradients. Raises ``NonFiniteError`` if the forward pass produces NaN or
    infinity anywhere.
    """
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    for k, leaf in leaves.items():
        if not np.all(np.isfinite(leaf.data)):
            raise NonFiniteError(k, "parameter leaf contains non-finite entries")
    out = loss_fn(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("loss_fn must return a Tensor")
    if out.data.size != 1:
        raise ValueError(f"loss_fn must return a scalar, got shape {out.shape}")
    out.backward()
    return {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
            for k, leaf in leaves.items()}


def value(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: ParamTree) -> float:
    """Evaluate a scalar loss at plain parameter arrays without building grads."""
    leaves = {k: Tensor(v) for k, v in params.items()}
    return loss_fn(leaves).item()


def finite_diff_grad(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: ParamTree,
                     eps: float = 1e-5) -> ParamTree:
    """Central-difference gradient, one coordinate at a time. O(d) loss evals."""
    out: ParamTree = {}
    work = {k: v.astype(np.float64).copy() for k, v in params.items()}
    for k, v in work.items():
        g = np.zeros_like(v)
        flat = v.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value(loss_fn, work)
            flat[i] = orig - eps
            down = value(loss_fn, work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        out[k] = g
    return out
