"""Small fully-connected and convolutional classifiers/regressors.

Parameters live in a flat ordered dict (``ParamTree``) keyed layer by layer,
weight before bias, so samplers and checkpoints see one canonical ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParamTree, Tensor

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    kind 'fcnn': flatten input, ``hidden`` dense layers, linear head.
    kind 'cnn': ``hidden`` 3x3 stride-1 pad-1 conv layers each followed by
    2x2 max pooling, then one dense head on the flattened features.
    ``hidden=[]`` with kind 'fcnn' gives a plain linear model.
    """

    kind: str = "fcnn"
    in_shape: tuple[int, ...] = (784,)
    out_dim: int = 10
    hidden: tuple[int, ...] = (100, 100, 100)
    activation: str = "relu"
    task: str = "classification"
    sigma_obs: float = 0.1  # observation noise for regression likelihoods

    def __post_init__(self):
        if self.kind not in ("fcnn", "cnn"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.activation not in ("relu", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind == "cnn" and len(self.in_shape) != 3:
            raise ValueError("cnn needs in_shape (channels, height, width)")
        if self.task == "regression" and self.sigma_obs <= 0:
            raise ValueError("sigma_obs must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "in_shape", tuple(int(d) for d in self.in_shape))


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: tuple[int, ...]
    role: str  # 'weight' or 'bias'
    fan_in: int
    conv_filter: bool = False
    kernel_hw: tuple[int, int] | None = None


def param_metadata(spec: ModelSpec) -> list[ParamInfo]:
    """Canonical parameter listing: layer order, weight before its bias."""
    infos: list[ParamInfo] = []
    if spec.kind == "fcnn":
        dims = [int(np.prod(spec.in_shape))] + list(spec.hidden) + [spec.out_dim]
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            infos.append(ParamInfo(f"layers.{i}.w", (dout, din), "weight", din))
            infos.append(ParamInfo(f"layers.{i}.b", (dout,), "bias", din))
        return infos
    c, h, w = spec.in_shape
    cin = c
    for i, cout in enumerate(spec.hidden):
        infos.append(ParamInfo(f"layers.{i}.w", (cout, cin, 3, 3), "weight",
                               cin * 9, conv_filter=True, kernel_hw=(3, 3)))
        infos.append(ParamInfo(f"layers.{i}.b", (cout,), "bias", cin * 9))
        cin = cout
        if h % 2 or w % 2:
            raise ValueError(f"spatial dims must halve cleanly, got {h}x{w} at layer {i}")
        h, w = h // 2, w // 2
    din = cin * h * w
    k = len(spec.hidden)
    infos.append(ParamInfo(f"layers.{k}.w", (spec.out_dim, din), "weight", din))
    infos.append(ParamInfo(f"layers.{k}.b", (spec.out_dim,), "bias", din))
    return infos


def init_params(spec: ModelSpec, seed: int = 0, mode: str = "he",
                prior_spec=None) -> ParamTree:
    """Draw initial parameters.

    mode 'he': weights N(0, 2/fan_in), biases zero.
    mode 'prior': one draw from ``prior_spec`` (see priors.sample_params).
    """
    if mode == "prior":
        from . import priors

        if prior_spec is None:
            raise ValueError("mode 'prior' needs a prior_spec")
        return priors.sample(prior_spec, spec, seed)
    if mode != "he":
        raise ValueError(f"unknown init mode {mode!r}")
    rng = np.random.default_rng(seed)
    params: ParamTree = {}
    for info in param_metadata(spec):
        if info.role == "weight":
            std = np.sqrt(2.0 / info.fan_in)
            params[info.name] = rng.normal(0.0, std, size=info.shape)
        else:
            params[info.name] = np.zeros(info.shape)
    return params


def _act(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return T.relu(x)
    if name == "tanh":
        return T.tanh(x)
    return T.sigmoid(x)


def forward(spec: ModelSpec, params: dict[str, Tensor], x: Tensor) -> Tensor:
    """Network output (logits or regression means), shape [batch, out_dim]."""
    if spec.kind == "fcnn":
        b = x.data.shape[0]
        flat_dim = int(np.prod(spec.in_shape))
        h = T.reshape(x, (b, flat_dim)) if x.data.ndim != 2 else x
        n_layers = len(spec.hidden) + 1
        for i in range(n_layers):
            h = T.add(T.matmul(h, T.transpose(params[f"layers.{i}.w"])),
                      params[f"layers.{i}.b"])
            if i < n_layers - 1:
                h = _act(h, spec.activation)
        return h
    b = x.data.shape[0]
    h = T.reshape(x, (b,) + spec.in_shape) if x.data.ndim != 4 else x
    for i in range(len(spec.hidden)):
        bias = T.reshape(params[f"layers.{i}.b"], (1, -1, 1, 1))
        h = T.add(T.conv2d(h, params[f"layers.{i}.w"], pad=1), bias)
        h = _act(h, spec.activation)
        h = T.maxpool2(h)
    k = len(spec.hidden)
    h = T.reshape(h, (b, -1))
    return T.add(T.matmul(h, T.transpose(params[f"layers.{k}.w"])), params[f"layers.{k}.b"])


def nll(spec: ModelSpec, outputs: Tensor, targets: np.ndarray,
        reduce: str = "sum") -> Tensor:
    """Negative log likelihood of ``targets`` under network outputs.

    Classification uses the categorical likelihood on softmax probabilities;
    regression uses an isotropic Gaussian with fixed ``spec.sigma_obs``
    (normalising constant included so values are comparable across runs).
    """
    if reduce not in ("sum", "mean"):
        raise ValueError(f"reduce must be 'sum' or 'mean', got {reduce!r}")
    n = outputs.data.shape[0]
    if spec.task == "classification":
        y = np.asarray(targets, dtype=np.int64)
        if y.ndim != 1 or y.shape[0] != n:
            raise ValueError(f"targets shape {y.shape} does not match batch {n}")
        if n and (y.min() < 0 or y.max() >= spec.out_dim):
            raise ValueError(f"class index out of range [0, {spec.out_dim})")
        picked = T.gather(T.log_softmax(outputs, axis=-1), y)
        total = T.scale(T.tsum(picked), -1.0)
    else:
        y = np.asarray(targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape != outputs.data.shape:
            raise ValueError(f"targets shape {y.shape} does not match output {outputs.data.shape}")
        s2 = spec.sigma_obs ** 2
        resid = T.sub(outputs, Tensor(y))
        quad = T.scale(T.tsum(T.square(resid)), 0.5 / s2)
        const = 0.5 * y.size * (_LOG_2PI + np.log(s2))
        total = T.add(quad, Tensor(const))
    return T.scale(total, 1.0 / n) if reduce == "mean" else total


def loss(spec: ModelSpec, params: dict[str, Tensor], x: Tensor,
         targets: np.ndarray, reduce: str = "sum") -> Tensor:
    """forward + nll in one differentiable expression."""
    return nll(spec, forward(spec, params, x), targets, reduce=reduce)


def forward_np(spec: ModelSpec, params: ParamTree, x: np.ndarray) -> np.ndarray:
    """Forward pass on plain arrays, no autodiff graph kept."""
    wrapped = {k: Tensor(v) for k, v in params.items()}
    return forward(spec, wrapped, Tensor(x)).data


def nll_np(spec: ModelSpec, params: ParamTree, x: np.ndarray, targets: np.ndarray,
           reduce: str = "sum") -> float:
    wrapped = {k: Tensor(v) for k, v in params.items()}
    return loss(spec, wrapped, Tensor(x), targets, reduce=reduce).item()


def flat_dim(spec: ModelSpec) -> int:
    return int(sum(np.prod(i.shape) for i in param_metadata(spec)))
