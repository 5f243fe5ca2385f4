"""SG-MCMC integrators (GGMC, SGLD) and the cyclical sampling driver.

The integrators are written in natural units: given a gradient estimate of a
potential V and a temperature tau they target exp(-V/tau). ``run_chain``
samples the posterior exp(-U/T) in the usual deep-learning parameterisation
by stepping the data-averaged potential V = U/N at tau = T/N, so ``lr0`` has
the same meaning and scale as an SGD learning rate on the mean loss.

GGMC uses the symmetric OBABO splitting of underdamped Langevin dynamics:

    O: m <- a m + sqrt((1 - a^2) tau) sqrt(M) xi,   a = exp(-gamma h / 2)
    B: m <- m - (h/2) grad V(w)
    A: w <- w + h M^{-1} m
    B: m <- m - (h/2) grad V(w)
    O: m <- a m + sqrt((1 - a^2) tau) sqrt(M) xi

With the noise gated off (tau = 0 in the O-steps, friction still applied)
the very same update is SGD with momentum, which is what the exploration
phase of the cyclical schedule runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import diagnostics, models, posterior
from .errors import DivergenceError, NonFiniteError
from .posterior import DIVERGENCE_BOUND, Potential
from .tensor import ParamTree, Tensor

GradFn = Callable[[ParamTree], ParamTree]

_MASK64 = (1 << 64) - 1


def _as_xy(dataset) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(dataset, "x") and hasattr(dataset, "y"):
        return dataset.x, dataset.y
    x, y = dataset
    return np.asarray(x), np.asarray(y)


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 draw: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def chain_seeds(master_seed: int, n_chains: int) -> list[int]:
    """Deterministic per-chain seeds: successive splitmix64 outputs."""
    s = int(master_seed) & _MASK64
    out = []
    for _ in range(n_chains):
        s, v = splitmix64(s)
        out.append(v)
    return out


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ggmc"  # 'ggmc', 'sgld', or 'sgd' (sgd drives sgd_map only)
    temperature: float = 1.0
    cycles: int = 60
    epochs_per_cycle: int = 45
    samples_per_cycle: int = 5
    noise_epochs: int = 15
    burn_in_samples: int = 50
    lr0: float = 0.01
    lr_schedule: str = "cosine"  # 'cosine' or 'flat'
    batch_size: int = 128
    friction: float | None = None  # None: derived so exp(-gamma lr0 / 2) = 0.9
    momentum_decay: float = 0.9
    precondition: str = "rmsprop"  # 'rmsprop' or 'none'
    init: str = "he"  # 'he' or 'prior'
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ggmc", "sgld", "sgd"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.cycles < 1 or self.epochs_per_cycle < 1:
            raise ValueError("cycles and epochs_per_cycle must be >= 1")
        if not (1 <= self.samples_per_cycle <= self.epochs_per_cycle):
            raise ValueError("need 1 <= samples_per_cycle <= epochs_per_cycle")
        if not (0 <= self.noise_epochs <= self.epochs_per_cycle):
            raise ValueError("need 0 <= noise_epochs <= epochs_per_cycle")
        if self.burn_in_samples < 0:
            raise ValueError("burn_in_samples must be >= 0")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.lr_schedule not in ("cosine", "flat"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.friction is not None and self.friction <= 0:
            raise ValueError("friction must be positive")
        if not (0.0 <= self.momentum_decay < 1.0):
            raise ValueError("momentum_decay must be in [0, 1)")
        if self.precondition not in ("rmsprop", "none"):
            raise ValueError(f"unknown precondition {self.precondition!r}")
        if self.init not in ("he", "prior"):
            raise ValueError(f"unknown init {self.init!r}")


def cyclical_lr(epoch_in_cycle: int, epochs_per_cycle: int, lr0: float) -> float:
    """Cosine decay from lr0 to (almost) zero across one cycle."""
    t = epoch_in_cycle
    if not (0 <= t < epochs_per_cycle):
        raise ValueError(f"epoch {t} outside cycle of length {epochs_per_cycle}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / epochs_per_cycle))


def derive_friction(lr0: float, momentum_decay: float = 0.9) -> float:
    """Friction whose per-step momentum decay equals ``momentum_decay``.

    The decay is matched at the cycle-start GGMC step size sqrt(lr0); the
    cosine schedule then shortens steps, so later steps decay slightly less.
    """
    return -math.log(momentum_decay) / math.sqrt(lr0)


@dataclass
class SamplerState:
    params: ParamTree
    momenta: ParamTree
    mass: ParamTree
    sqrt_mass: ParamTree
    v: ParamTree  # squared-gradient accumulator for the preconditioner
    rng: np.random.Generator
    step: int = 0


def init_state(params: ParamTree, seed: int = 0) -> SamplerState:
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    return SamplerState(
        params=params,
        momenta={k: np.zeros_like(v) for k, v in params.items()},
        mass={k: np.ones_like(v) for k, v in params.items()},
        sqrt_mass={k: np.ones_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        rng=np.random.default_rng(seed),
    )


def update_preconditioner(state: SamplerState, grad: ParamTree,
                          decay: float = 0.99, eps: float = 1e-8) -> None:
    """RMSprop-style diagonal mass from a squared-gradient moving average.

    Each tensor's mass is normalised to mean one so the preconditioner only
    reshapes relative step sizes, leaving the overall scale to lr0. A
    relative floor of a tenth of the tensor's mean RMS is added first:
    rarely-active coordinates would otherwise get masses small enough to
    push their effective step size past the stability threshold.
    """
    for k, g in grad.items():
        state.v[k] = decay * state.v[k] + (1.0 - decay) * g * g
        m = np.sqrt(state.v[k]) + eps
        m = m + 0.1 * m.mean()
        state.mass[k] = m / m.mean()
        state.sqrt_mass[k] = np.sqrt(state.mass[k])


def _o_step(state: SamplerState, a: float, c: float) -> None:
    for k, m in state.momenta.items():
        if c != 0.0:
            m *= a
            m += c * state.sqrt_mass[k] * state.rng.standard_normal(m.shape)
        else:
            m *= a  # noise gated off: pure friction, rng stream untouched


def ggmc_step(state: SamplerState, grad_fn: GradFn, h: float, gamma: float,
              temperature: float, noise: bool = True) -> ParamTree:
    """One OBABO step targeting exp(-V/temperature). Returns the exit gradient.

    ``grad_fn`` is evaluated at the entry and exit positions (same minibatch
    both times when stochastic). ``noise=False`` zeroes the injected noise
    but keeps the friction, giving the SGD-with-momentum exploration update.
    """
    a = math.exp(-gamma * h / 2.0)
    tau = temperature if noise else 0.0
    c = math.sqrt((1.0 - a * a) * tau)
    _o_step(state, a, c)
    g = grad_fn(state.params)
    for k in state.params:
        state.momenta[k] -= 0.5 * h * g[k]
        state.params[k] += h * state.momenta[k] / state.mass[k]
    g = grad_fn(state.params)
    for k in state.params:
        state.momenta[k] -= 0.5 * h * g[k]
    _o_step(state, a, c)
    state.step += 1
    return g


def sgld_step(state: SamplerState, grad: ParamTree, h: float,
              temperature: float, noise: bool = True) -> None:
    """Euler-Maruyama overdamped Langevin step targeting exp(-V/temperature)."""
    c = math.sqrt(2.0 * h * temperature) if noise else 0.0
    for k, w in state.params.items():
        w -= h * grad[k] / state.mass[k]
        if c != 0.0:
            w += c * state.rng.standard_normal(w.shape) / state.sqrt_mass[k]
    state.step += 1


@dataclass
class Draw:
    params: ParamTree
    meta: dict


@dataclass
class SampleArchive:
    """Everything one chain produced: raw draws, config, divergence record."""

    config: SamplerConfig
    seed: int
    draws: list[Draw] = field(default_factory=list)
    diverged: bool = False
    divergence_info: dict | None = None

    def retained(self) -> list[Draw]:
        return [d for d in self.draws if not d.meta.get("burn_in", False)]

    def retained_params(self) -> list[ParamTree]:
        return [d.params for d in self.retained()]


def _epoch_batches(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def run_chain(config: SamplerConfig, model_spec, prior_spec, train,
              eval_data=None, seed: int | None = None,
              start_params: ParamTree | None = None) -> SampleArchive:
    """Run one cyclical SG-MCMC chain on the posterior of a model and prior.

    ``train`` (and the optional ``eval_data``) are data.Dataset objects or
    plain (x, y) pairs. Each cycle runs ``epochs_per_cycle`` epochs with the
    learning rate fixed at the start of every epoch (cosine decay within the
    cycle, or flat). Injected noise is active only in the last
    ``noise_epochs`` epochs of the cycle; the RMSprop mass is refreshed once
    at the end of every no-noise epoch and frozen while noise is active.
    The last ``samples_per_cycle`` epoch ends of every cycle are
    snapshotted; the first ``burn_in_samples`` snapshots overall are flagged
    as burn-in but persisted for diagnostics. ``start_params`` warm-starts
    the chain in place of the seeded init.

    Divergence (non-finite values anywhere, or |U| > 1e12 at a snapshot)
    truncates the chain and marks the archive instead of raising.
    """
    if config.kind not in ("ggmc", "sgld"):
        raise ValueError(f"run_chain supports 'ggmc' and 'sgld'; use sgd_map for {config.kind!r}")
    x_train, y_train = _as_xy(train)
    eval_x, eval_y = _as_xy(eval_data) if eval_data is not None else (None, None)
    pot = Potential(model_spec, prior_spec, x_train, y_train,
                    temperature=config.temperature)
    seed = config.seed if seed is None else int(seed)
    n = pot.n
    if n < 1:
        raise ValueError("run_chain needs a non-empty training set")
    scale = 1.0 / n  # step the data-averaged potential V = U/N
    tau = config.temperature * scale
    if start_params is None:
        params0 = models.init_params(pot.spec, seed=seed, mode=config.init,
                                     prior_spec=pot.prior if config.init == "prior" else None)
    else:
        params0 = start_params
    _, noise_seed = splitmix64(seed ^ 0x5EED)
    state = init_state(params0, seed=noise_seed)
    gamma = config.friction if config.friction is not None else derive_friction(
        config.lr0, config.momentum_decay)

    archive = SampleArchive(config=config, seed=seed)
    e_total = config.epochs_per_cycle
    noise_start = e_total - config.noise_epochs
    sample_start = e_total - config.samples_per_cycle

    def scaled_grad(batch_idx):
        def fn(p: ParamTree) -> ParamTree:
            g = posterior.minibatch_grad(pot, p, batch_idx)
            return {k: v * scale for k, v in g.items()}
        return fn

    try:
        for cycle in range(config.cycles):
            for epoch in range(e_total):
                lr = (config.lr0 if config.lr_schedule == "flat"
                      else cyclical_lr(epoch, e_total, config.lr0))
                # at terminal momentum one OBABO step displaces (h^2/M)*grad,
                # so the scheduled SGD-equivalent rate lr maps to h = sqrt(lr)
                h = math.sqrt(lr) if config.kind == "ggmc" else lr
                noise_on = epoch >= noise_start
                last_grad = None
                for batch_idx in _epoch_batches(state.rng, n, config.batch_size):
                    gfn = scaled_grad(batch_idx)
                    if config.kind == "ggmc":
                        last_grad = ggmc_step(state, gfn, h, gamma,
                                              config.temperature * scale, noise=noise_on)
                    else:
                        g = gfn(state.params)
                        sgld_step(state, g, h, config.temperature * scale, noise=noise_on)
                        last_grad = g
                if config.precondition == "rmsprop" and not noise_on and last_grad is not None:
                    update_preconditioner(state, last_grad)
                if epoch >= sample_start:
                    _snapshot(archive, state, pot, cycle, epoch, lr, noise_on,
                              tau, scale, eval_x, eval_y)
    except NonFiniteError as err:
        archive.diverged = True
        archive.divergence_info = {"step": state.step, "node": err.node,
                                   "reason": str(err)}
    return archive


def _snapshot(archive: SampleArchive, state: SamplerState, pot: Potential,
              cycle: int, epoch: int, lr: float, noise_on: bool, tau: float,
              scale: float, eval_x, eval_y) -> None:
    u = posterior.potential(pot, state.params)  # raises NonFiniteError if bad
    if abs(u) > DIVERGENCE_BOUND:
        raise NonFiniteError("potential", f"|U| = {abs(u):.3e} exceeds divergence bound")
    lp = posterior.log_prior(pot, state.params)
    grad_v = {k: v * scale for k, v in posterior.grad_potential(pot, state.params).items()}
    kin = diagnostics.kinetic_temperature(state.momenta, state.mass)
    conf = diagnostics.configurational_temperature(state.params, grad_v)
    raw_index = len(archive.draws)
    meta = {
        "cycle": cycle,
        "epoch": epoch,
        "step": state.step,
        "lr": lr,
        "noise_on": noise_on,
        "raw_index": raw_index,
        "burn_in": raw_index < archive.config.burn_in_samples,
        "potential": u,
        "log_prior": lp,
        "train_nll_mean": (u + lp) / pot.n,
        "kinetic_temp": kin.overall,
        "kinetic_temp_ratio": kin.overall / tau if tau > 0 else float("nan"),
        "config_temp": conf.overall,
        "config_temp_ratio": conf.overall / tau if tau > 0 else float("nan"),
    }
    if eval_x is not None and eval_y is not None:
        meta["eval_nll_mean"] = models.nll_np(pot.spec, state.params, eval_x,
                                              eval_y, reduce="mean")
    archive.draws.append(Draw(params={k: v.copy() for k, v in state.params.items()},
                              meta=meta))


MAP_SCHEDULE = [(0.05, 150), (0.005, 150), (0.0005, 150)]  # 450 epochs total


def sgd_map(config: SamplerConfig, model_spec, prior_spec, train,
            schedule: list[tuple[float, int]] | None = None
            ) -> tuple[ParamTree, list[dict]]:
    """Momentum SGD minimising the mean potential U/N.

    Returns (params, log); the log has one row per epoch with that epoch's
    learning rate and mean train NLL. The default schedule is the preset
    three 150-epoch stages at learning rates 0.05, 0.005, 0.0005. With the
    improper uniform prior this is plain maximum-likelihood training; with
    a proper prior it is MAP estimation. Divergence raises DivergenceError.
    """
    x_train, y_train = _as_xy(train)
    pot = Potential(model_spec, prior_spec, x_train, y_train)
    if pot.n < 1:
        raise ValueError("sgd_map needs a non-empty training set")
    if schedule is None:
        schedule = MAP_SCHEDULE
    seed = config.seed
    params = models.init_params(model_spec, seed=seed, mode=config.init,
                                prior_spec=prior_spec if config.init == "prior" else None)
    params = {k: np.array(v) for k, v in params.items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(splitmix64(seed ^ 0x5EED)[1])
    n = pot.n
    mu = config.momentum_decay
    log: list[dict] = []
    epoch = 0
    try:
        for lr, epochs in schedule:
            for _ in range(epochs):
                for batch_idx in _epoch_batches(rng, n, config.batch_size):
                    g = posterior.minibatch_grad(pot, params, batch_idx)
                    for k in params:
                        vel[k] = mu * vel[k] - lr * g[k] / n
                        params[k] += vel[k]
                out = models.forward_np(model_spec, params, pot.x)
                train_nll = models.nll(model_spec, Tensor(out), pot.y,
                                       reduce="mean").item()
                if abs(train_nll) > DIVERGENCE_BOUND:
                    raise NonFiniteError("train_nll", f"|value| exceeds divergence bound")
                row = {"epoch": epoch, "lr": lr, "train_nll_mean": train_nll}
                if model_spec.task == "classification":
                    row["train_error"] = float((out.argmax(axis=1) != pot.y).mean())
                log.append(row)
                epoch += 1
    except NonFiniteError as err:
        raise DivergenceError(f"optimization diverged at epoch {epoch}: {err}") from err
    return params, log
