"""Sampling the local Gibbs distribution and estimating Gibbs-classifier errors.

The local Gibbs distribution around a centre ``w`` has unnormalised density
``exp(-tau * R_S(v) - tau * gamma / 2 * |v - w|^2)``.  With a Lebesgue prior the
coupling term is dropped and the target is the Gibbs posterior
``exp(-tau * R_S(v))``.  Chains are plain SGLD; the first 10% of states are
discarded as burn-in before any averaging.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .bounds import KLEstimate, batch_means_se, estimate_kl_from_losses
from .nn_core import (BoundedCrossEntropy, LabeledDataset, NetworkSpec, Ramp, ZeroOne, dataset_grad,
                      empirical_risk, losses_from_probs, predict_proba)
from .optim import MinibatchSampler, RngStream, Schedule, sgld_step

DIVERGENCE_LIMIT = 1e8
BURN_IN = 0.1
EVAL_ALPHA = 0.005


class ChainDivergedError(ArithmeticError):
    pass


@dataclass
class GibbsTarget:
    center: np.ndarray
    gamma: float
    tau: float
    spec: NetworkSpec | None = None
    dataset: LabeledDataset | None = None
    loss_kind: BoundedCrossEntropy = field(default_factory=BoundedCrossEntropy)
    prior: str = "gaussian"
    risk_grad: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not (self.gamma > 0 and self.tau > 0):
            raise ValueError("gamma and tau must be positive")
        if self.prior not in ("gaussian", "lebesgue"):
            raise ValueError(f"unknown prior {self.prior!r}")
        if self.risk_grad is None and (self.spec is None or self.dataset is None):
            raise ValueError("a target needs either a network and dataset or an explicit risk gradient")

    @property
    def prior_std(self) -> float:
        return 1.0 / math.sqrt(self.tau * self.gamma)

    def grad_risk(self, v: np.ndarray, idx=None) -> np.ndarray:
        if self.risk_grad is not None:
            return self.risk_grad(v)
        return dataset_grad(self.loss_kind, self.spec, v, self.dataset, idx)

    def surrogate_loss(self, v: np.ndarray) -> float:
        """``tau * R_S(v)`` under the bounded surrogate, the tilt defining the Gibbs measure."""
        return self.tau * empirical_risk(self.loss_kind, self.spec, v, self.dataset)

    def prior_samples(self, k: int, rng: RngStream) -> np.ndarray:
        return self.center + self.prior_std * rng.normal((k, self.center.shape[0]))


def default_eval_schedule(target: GibbsTarget, scale: float = 0.2) -> Schedule:
    """Constant step ``scale / (tau * gamma)``: each step relaxes a fraction ``scale/2`` toward the prior mean."""
    return Schedule(scale / (target.tau * target.gamma), 0.0, "per_inner_iteration")


def sample_chain(target: GibbsTarget, n_steps: int, schedule: Schedule, rng: RngStream,
                 batch_size: int | None = None, start=None) -> Iterator[np.ndarray]:
    """SGLD chain on the target; yields every state (copies not made)."""
    v = np.array(target.center if start is None else start, dtype=np.float64)
    sampler = None
    if batch_size is not None and target.dataset is not None and batch_size < len(target.dataset):
        sampler = MinibatchSampler(len(target.dataset), batch_size, rng.spawn(7))
    coupled = target.prior == "gaussian"
    for t in range(1, n_steps + 1):
        drift = -target.tau * target.grad_risk(v, sampler() if sampler else None)
        if coupled:
            drift = drift - target.tau * target.gamma * (v - target.center)
        v = sgld_step(v, drift, schedule(t), 1.0, rng)
        big = np.abs(v) > DIVERGENCE_LIMIT
        if big.any():
            i = int(np.flatnonzero(big)[0])
            raise ChainDivergedError(
                f"chain diverged at step {t}: coordinate {i} reached {v[i]:.3g} (step size {schedule(t):.3g})"
            )
        yield v


@dataclass
class ChainEstimate:
    value: float
    std_error: float
    samples_used: int
    running_average_weight: float = EVAL_ALPHA
    running_average: float = float("nan")


def summarize(values, alpha: float = EVAL_ALPHA, burn_in: float = BURN_IN) -> ChainEstimate:
    """Mean and batch-means standard error after burn-in; also the α-weighted running average."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no samples to summarise")
    x = x[int(burn_in * x.size):] if x.size > 1 else x
    ema = x[0]
    for v in x[1:]:
        ema = (1.0 - alpha) * ema + alpha * v
    return ChainEstimate(float(x.mean()), batch_means_se(x), int(x.size), alpha, float(ema))


def mean_classifier_error(spec: NetworkSpec, w, data: LabeledDataset) -> float:
    """Zero-one error of the deterministic network at ``w``."""
    return empirical_risk(ZeroOne(), spec, w, data)


def gibbs_error(target: GibbsTarget, data: LabeledDataset, n_samples: int, rng: RngStream,
                schedule: Schedule | None = None, thin: int = 1, burn_in: float = BURN_IN) -> ChainEstimate:
    """Zero-one error on ``data`` of the randomised classifier drawn from the target."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    schedule = schedule or default_eval_schedule(target)
    errs = []
    for t, v in enumerate(sample_chain(target, n_samples * thin, schedule, rng), 1):
        if t % thin == 0:
            errs.append(mean_classifier_error(target.spec, v, data))
    return summarize(errs, burn_in=burn_in if n_samples > 1 else 0.0)


@dataclass
class GibbsEvaluation:
    train_err: ChainEstimate
    test_err: ChainEstimate | None
    train_ramp: ChainEstimate
    kl: KLEstimate
    n_chain: int
    n_prior: int


def evaluate_gibbs(target: GibbsTarget, test: LabeledDataset | None, n_steps: int, n_prior: int,
                   rng: RngStream, thin: int = 1, ramp_slope: float = 1e6, schedule: Schedule | None = None,
                   batch_size: int | None = None) -> GibbsEvaluation:
    """One chain on the target feeding every Gibbs statistic needed for the bounds.

    For each retained state: zero-one error on the training and test sets, ramp
    risk on the training set and ``tau * R_S`` for the KL estimate.  Prior draws
    give the log-partition term.
    """
    spec, train = target.spec, target.dataset
    schedule = schedule or default_eval_schedule(target)
    ramp = Ramp(ramp_slope)
    zo = ZeroOne()
    rows = []
    start = int(BURN_IN * n_steps)
    for t, v in enumerate(sample_chain(target, n_steps, schedule, rng, batch_size), 1):
        if t <= start or (t - start) % thin:
            continue
        probs = predict_proba(spec, v, train.features)
        row = [losses_from_probs(zo, spec, probs, train.labels).mean(),
               losses_from_probs(ramp, spec, probs, train.labels).mean(),
               target.tau * losses_from_probs(target.loss_kind, spec, probs, train.labels).mean()]
        if test is not None:
            row.append(mean_classifier_error(spec, v, test))
        rows.append(row)
    rows = np.array(rows)
    prior = target.prior_samples(n_prior, rng)
    prior_losses = [target.surrogate_loss(v) for v in prior]
    min_samples = min(100, rows.shape[0], n_prior)
    kl = estimate_kl_from_losses(rows[:, 2], prior_losses, min_samples=min_samples)
    test_est = summarize(rows[:, 3], burn_in=0.0) if test is not None else None
    return GibbsEvaluation(summarize(rows[:, 0], burn_in=0.0), test_est, summarize(rows[:, 1], burn_in=0.0),
                           kl, rows.shape[0], n_prior)


# --- 1-D oracles -----------------------------------------------------------------------

def langevin_1d(grad_log_density: Callable[[float], float], x0: float, n_steps: int, step: float,
                rng: RngStream) -> np.ndarray:
    """Scalar SGLD ``x + step/2 * d log pi + sqrt(step) N`` with noise pre-drawn in one block."""
    noise = rng.normal(n_steps) * math.sqrt(step)
    out = np.empty(n_steps)
    x = float(x0)
    for t in range(n_steps):
        x = x + 0.5 * step * grad_log_density(x) + noise[t]
        out[t] = x
    return out


def chain_gradient_estimate_1d(center: float, gamma: float, tau: float, risk_grad: Callable[[float], float],
                               n_steps: int, rng: RngStream, step: float | None = None) -> ChainEstimate:
    """Chain estimate of ``dF/dw = tau gamma (E_G[v] - center)`` on a 1-D target."""
    step = step if step is not None else 0.05 / (tau * gamma)
    glp = lambda v: -tau * risk_grad(v) - tau * gamma * (v - center)
    xs = langevin_1d(glp, center, n_steps, step, rng)
    est = summarize(xs)
    k = tau * gamma
    return ChainEstimate(k * (est.value - center), k * est.std_error, est.samples_used)
