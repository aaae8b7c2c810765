"""SGD, SGLD, Entropy-SGD and Entropy-SGLD on flat weight vectors.

All four algorithms share one update primitive, :func:`sgld_step`.  SGD is SGLD
at infinite inverse temperature and Entropy-SGD is Entropy-SGLD without the
outer-loop noise, so the pairs produce bit-identical trajectories under the
same seeds.

Step-size conventions (with ``tau`` the inverse temperature of the local Gibbs
distribution and ``gamma`` the coupling):

* inner loop: ``eta'_i = eta' / i`` within each outer step, ``eta'`` defaults
  to ``2 / tau``;
* outer loop: ``eta_t = eta * t**-0.6``, ``eta`` defaults to
  ``base_lr / (gamma * tau)`` with ``base_lr = 0.006``.

The outer update moves ``w`` toward the inner-loop average ``mu``, i.e. it
ascends the local entropy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .nn_core import BoundedCrossEntropy, LabeledDataset, NetworkSpec, dataset_grad, init_weights

INF = math.inf

ALGORITHMS = ("sgd", "sgld", "entropy_sgd", "entropy_sgld")


class NonFiniteError(FloatingPointError):
    """Raised when an update would consume or produce a non-finite value."""


class RngStream:
    """A seeded Gaussian / permutation source that counts its draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._gen = np.random.default_rng(self.seed)

    def normal(self, size) -> np.ndarray:
        self.counter += 1
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def spawn(self, offset: int) -> "RngStream":
        return RngStream(np.random.SeedSequence([self.seed, offset]).generate_state(1, np.uint64)[0])

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


@dataclass(frozen=True)
class Schedule:
    """``step(t) = base * t**-exponent`` for ``t = 1, 2, ...``."""
    base: float
    exponent: float = 0.0
    kind: str = "outer"

    def __post_init__(self):
        if not self.base > 0:
            raise ValueError(f"schedule base must be positive, got {self.base}")
        if self.exponent < 0:
            raise ValueError("a negative exponent would make the schedule increase")

    def __call__(self, t: int) -> float:
        if t < 1:
            raise ValueError("schedules are indexed from t = 1")
        return self.base * t ** -self.exponent


@dataclass(frozen=True)
class LocalEntropyConfig:
    gamma: float = 1.0
    tau: float = 1.0
    beta: float = 1.0
    L: int = 20
    K: int = 128
    alpha: float = 0.75
    eta_prime: float | None = None
    eta: float | None = None
    base_lr: float = 0.006
    outer_exponent: float = 0.6
    inner_exponent: float = 1.0
    sgd_lr: float = 0.1
    sgd_exponent: float = 0.0

    def __post_init__(self):
        for name in ("gamma", "tau", "beta", "base_lr", "sgd_lr"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not (isinstance(self.L, int) and self.L >= 1):
            raise ValueError("L must be a positive integer")
        if not (isinstance(self.K, int) and self.K >= 1):
            raise ValueError("K must be a positive integer")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        for name in ("eta_prime", "eta"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def inner_base(self) -> float:
        return self.eta_prime if self.eta_prime is not None else 2.0 / self.tau

    @property
    def outer_base(self) -> float:
        return self.eta if self.eta is not None else self.base_lr / (self.gamma * self.tau)

    @property
    def thermal_noise(self) -> float:
        return thermal_noise(self.tau)

    def inner_schedule(self) -> Schedule:
        return Schedule(self.inner_base, self.inner_exponent, "inner")

    def outer_schedule(self) -> Schedule:
        return Schedule(self.outer_base, self.outer_exponent, "outer")

    def sgd_schedule(self) -> Schedule:
        return Schedule(self.sgd_lr, self.sgd_exponent, "outer")

    def with_(self, **kw) -> "LocalEntropyConfig":
        return replace(self, **kw)


def thermal_noise(tau: float) -> float:
    return math.sqrt(2.0 / tau)


def tau_for_thermal_noise(noise: float) -> float:
    return 2.0 / noise ** 2


def _check_finite(name: str, v: np.ndarray):
    bad = ~np.isfinite(v)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"{name} has non-finite value {v[i]!r} at coordinate {i}")


def sgld_step(w, grad_estimate, step: float, inv_temp: float, rng: RngStream) -> np.ndarray:
    """``w + step/2 * grad_estimate + sqrt(step / inv_temp) * N(0, I)``.

    ``grad_estimate`` is an ascent direction (gradient of the log target).
    ``inv_temp = INF`` skips the noise draw entirely.
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(grad_estimate, dtype=np.float64)
    _check_finite("gradient estimate", g)
    if step < 0:
        raise ValueError("step must be nonnegative")
    out = w + 0.5 * step * g
    if not math.isinf(inv_temp):
        if not inv_temp > 0:
            raise ValueError("inverse temperature must be positive")
        out = out + math.sqrt(step / inv_temp) * rng.normal(w.shape)
    return out


class MinibatchSampler:
    """Draws size-``K`` index batches without replacement, reshuffling each pass."""

    def __init__(self, m: int, K: int, rng: RngStream):
        if m < 1:
            raise ValueError("cannot sample minibatches from an empty dataset")
        self.m = m
        self.K = min(K, m)
        self.rng = rng
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0

    def __call__(self) -> np.ndarray:
        if self._pos + self.K > self._perm.shape[0]:
            self._perm = self.rng.permutation(self.m)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.K]
        self._pos += self.K
        return idx


GradFn = Callable[[np.ndarray], np.ndarray]


def make_minibatch_grad(spec: NetworkSpec, data: LabeledDataset, K: int, rng: RngStream,
                        loss_kind=BoundedCrossEntropy()) -> GradFn:
    """Minibatch-mean loss gradient oracle; each call draws a fresh batch."""
    sampler = MinibatchSampler(len(data), K, rng)

    def grad(w):
        return dataset_grad(loss_kind, spec, w, data, sampler())
    return grad


def inner_loop_estimate(w, grad_fn: GradFn, cfg: LocalEntropyConfig, rng: RngStream,
                        trace: list | None = None) -> np.ndarray:
    """``L`` SGLD steps on the local Gibbs density around ``w``; returns the running average ``mu``.

    ``grad_fn`` returns a minibatch estimate of the empirical-risk gradient.
    """
    w = np.asarray(w, dtype=np.float64)
    sched = cfg.inner_schedule()
    wp = w.copy()
    mu = w.copy()
    for i in range(1, cfg.L + 1):
        step = sched(i)
        drift = -cfg.tau * grad_fn(wp) - cfg.gamma * cfg.tau * (wp - w)
        wp = sgld_step(wp, drift, step, 1.0, rng)
        mu = (1.0 - cfg.alpha) * mu + cfg.alpha * wp
        if trace is not None:
            trace.append(wp.copy())
    return mu


def inner_loop_rescaled(w, grad_fn: GradFn, cfg: LocalEntropyConfig, rng: RngStream,
                        trace: list | None = None) -> np.ndarray:
    """The same inner loop written with step ``eta'/2 * tau`` and noise factor ``sqrt(2/tau)``."""
    w = np.asarray(w, dtype=np.float64)
    sched = cfg.inner_schedule()
    factor = thermal_noise(cfg.tau)
    wp = w.copy()
    mu = w.copy()
    for i in range(1, cfg.L + 1):
        step = 0.5 * sched(i) * cfg.tau
        d = -grad_fn(wp) - cfg.gamma * (wp - w)
        _check_finite("gradient estimate", d)
        wp = wp + step * d + math.sqrt(step) * factor * rng.normal(w.shape)
        mu = (1.0 - cfg.alpha) * mu + cfg.alpha * wp
        if trace is not None:
            trace.append(wp.copy())
    return mu


def rescaled_inner_equivalence(cfg: LocalEntropyConfig, w, grad_factory: Callable[[RngStream], GradFn],
                               seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Run both inner-loop parameterisations from shared seeds; return both trajectories.

    ``grad_factory(rng)`` must build a gradient oracle whose minibatches are drawn from ``rng``.
    """
    trajectories = []
    for loop in (inner_loop_estimate, inner_loop_rescaled):
        trace: list = []
        loop(w, grad_factory(RngStream(seed + 1)), cfg, RngStream(seed), trace)
        trajectories.append(np.array(trace))
    return trajectories[0], trajectories[1]


def outer_step(w, mu, step: float, cfg: LocalEntropyConfig, langevin: bool, rng: RngStream) -> np.ndarray:
    """Move ``w`` toward ``mu`` by ``step/2 * tau*gamma``, plus ``sqrt(step/beta)`` noise if Langevin."""
    w = np.asarray(w, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    grad_F = cfg.tau * cfg.gamma * (mu - w)
    return sgld_step(w, grad_F, step, cfg.beta if langevin else INF, rng)


def entropy_step(w, grad_fn: GradFn, cfg: LocalEntropyConfig, t: int, langevin: bool,
                 rng: RngStream) -> np.ndarray:
    """One outer step of Entropy-SG(L)D at outer iteration ``t``."""
    mu = inner_loop_estimate(w, grad_fn, cfg, rng)
    return outer_step(w, mu, cfg.outer_schedule()(t), cfg, langevin, rng)


def steps_per_epoch(algorithm: str, m: int, cfg: LocalEntropyConfig) -> int:
    """Outer steps per epoch: ``m // K`` for (S)GLD, ``m // (L*K)`` for Entropy-SG(L)D, at least 1."""
    if algorithm in ("sgd", "sgld"):
        return max(1, m // cfg.K)
    return max(1, m // (cfg.L * cfg.K))


@dataclass
class TrainingResult:
    w: np.ndarray
    algorithm: str
    ticks: int = 0
    steps: int = 0
    history: list = field(default_factory=list)


def _validate(algorithm, epochs, loss_kind):
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if not (isinstance(epochs, int) and epochs >= 1):
        raise ValueError("epochs must be a positive integer")
    if not getattr(loss_kind, "differentiable", False):
        raise ValueError("training needs a differentiable loss")


def train_iter(algorithm: str, spec: NetworkSpec, data: LabeledDataset, cfg: LocalEntropyConfig,
               epochs: int, seed: int = 0, w0=None, loss_kind=None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(tick, w)`` after every epoch (epoch / L tick for the entropy variants)."""
    loss_kind = loss_kind or BoundedCrossEntropy()
    _validate(algorithm, epochs, loss_kind)
    root = RngStream(seed)
    w = init_weights(spec, root.spawn(0).generator) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (spec.n_params,):
        raise ValueError(f"initial weights have shape {w.shape}, expected ({spec.n_params},)")
    noise_rng = root.spawn(1)
    grad_fn = make_minibatch_grad(spec, data, cfg.K, root.spawn(2), loss_kind)
    per_epoch = steps_per_epoch(algorithm, len(data), cfg)
    t = 0
    if algorithm in ("sgd", "sgld"):
        sched = cfg.sgd_schedule()
        # step 2*lr with inverse temperature tau: w - lr*grad + sqrt(lr)*sqrt(2/tau)*N
        inv_temp = INF if algorithm == "sgd" else cfg.tau
        for tick in range(1, epochs + 1):
            for _ in range(per_epoch):
                t += 1
                w = sgld_step(w, -grad_fn(w), 2.0 * sched(t), inv_temp, noise_rng)
            yield tick, w
    else:
        langevin = algorithm == "entropy_sgld"
        for tick in range(1, epochs + 1):
            for _ in range(per_epoch):
                t += 1
                w = entropy_step(w, grad_fn, cfg, t, langevin, noise_rng)
            yield tick, w


def run_training(algorithm: str, spec: NetworkSpec, data: LabeledDataset, cfg: LocalEntropyConfig,
                 epochs: int, callbacks=(), seed: int = 0, w0=None, loss_kind=None) -> TrainingResult:
    """Train for ``epochs`` ticks, calling each ``callback(tick, w)`` after every tick."""
    result = TrainingResult(w=np.empty(0), algorithm=algorithm)
    per_epoch = None
    for tick, w in train_iter(algorithm, spec, data, cfg, epochs, seed, w0, loss_kind):
        per_epoch = per_epoch or steps_per_epoch(algorithm, len(data), cfg)
        result.w = w
        result.ticks = tick
        result.steps = tick * per_epoch
        for cb in callbacks:
            out = cb(tick, w)
            if out is not None:
                result.history.append(out)
    return result
