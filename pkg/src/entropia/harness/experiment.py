"""Single-run experiment driver: train, evaluate bounds at ticks, emit CSV/JSON."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .. import bounds
from ..gibbs import GibbsTarget, evaluate_gibbs, mean_classifier_error
from ..nn_core import SIGMOID_BINARY, SOFTMAX_MULTICLASS, BoundedCrossEntropy, LabeledDataset, NetworkSpec
from ..optim import ALGORITHMS, LocalEntropyConfig, RngStream, tau_for_thermal_noise, train_iter
from .data import binarize_labels, load_mnist_dir, randomize_labels, seeded_subset, synthetic_gaussians

log = logging.getLogger(__name__)

CSV_VERSION = "v1"
METRIC_COLUMNS = (
    "tick", "train_err_mean", "test_err_mean", "train_err_gibbs", "test_err_gibbs",
    "pac_bound", "h_bound", "c_bound", "kl_estimate", "epsilon", "wall_seconds",
)
FULL_SCALE_WARNING = 20000


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


class RunAborted(RuntimeError):
    """A module error stopped the run; partial outputs are kept (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    data: str = "synthetic"
    algorithm: str = "entropy_sgld"
    labels: str = "true"
    label_seed: int = 1
    seed: int = 0
    # synthetic data
    m: int = 2000
    m_test: int = 4000
    d: int = 50
    separation: float = 6.0
    data_seed: int = 0
    # MNIST
    subset: int | None = None
    binary: bool = True
    standardize: bool = False
    # network
    hidden: tuple[int, ...] = (256, 256)
    # optimiser; tau accepts a number, "sqrt_m" or "noise:<thermal noise>"
    tau: float | str = "sqrt_m"
    beta: float = 1.0
    gamma: float = 1.0
    L: int = 20
    K: int = 32
    alpha: float = 0.75
    base_lr: float = 1.0
    eta_prime: float | None = None
    eta: float | None = None
    sgd_lr: float = 0.1
    epochs: int = 50
    # evaluation
    bound_eval_every: int = 10
    eval_chain_steps: int = 400
    eval_prior_samples: int = 200
    eval_thin: int = 2
    eval_step_scale: float = 0.2
    delta: float = 0.05
    l_max: float = 4.0
    ramp_slope: float = 1e6
    # outputs
    out: str | None = None
    plot: bool = False

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if self.labels not in ("true", "random"):
            raise ConfigError("labels must be 'true' or 'random'")
        if not (self.data == "synthetic" or self.data.startswith("idx:")):
            raise ConfigError("data must be 'synthetic' or 'idx:<directory>'")
        if self.data.startswith("idx:") and not os.path.isdir(self.data[4:]):
            raise ConfigError(f"IDX directory {self.data[4:]!r} does not exist")
        if self.epochs < 1 or self.bound_eval_every < 1:
            raise ConfigError("epochs and bound_eval_every must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.eval_prior_samples < 100:
            raise ConfigError("eval_prior_samples must be >= 100")
        chain_kept = (self.eval_chain_steps - int(0.1 * self.eval_chain_steps)) // self.eval_thin
        if chain_kept < 100:
            raise ConfigError("eval_chain_steps / eval_thin leaves fewer than 100 chain samples after burn-in")
        if self.subset is not None and self.subset < 1:
            raise ConfigError("subset must be positive")
        return self

    def resolve_tau(self, m: int) -> float:
        tau = self.tau
        if isinstance(tau, str):
            if tau == "sqrt_m":
                return math.sqrt(m)
            if tau.startswith("noise:"):
                return tau_for_thermal_noise(float(tau[6:]))
            try:
                return float(tau)
            except ValueError:
                raise ConfigError(f"cannot interpret tau={tau!r}") from None
        return float(tau)

    def optimizer_config(self, m: int) -> LocalEntropyConfig:
        try:
            return LocalEntropyConfig(
                gamma=self.gamma, tau=self.resolve_tau(m), beta=self.beta, L=self.L, K=self.K,
                alpha=self.alpha, eta_prime=self.eta_prime, eta=self.eta, base_lr=self.base_lr,
                sgd_lr=self.sgd_lr,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class MetricsRow:
    tick: int
    train_err_mean: float
    test_err_mean: float
    train_err_gibbs: float
    test_err_gibbs: float
    pac_bound: float
    h_bound: float
    c_bound: float
    kl_estimate: float
    epsilon: float
    wall_seconds: float

    def csv_fields(self) -> list[str]:
        return [str(self.tick)] + [f"{getattr(self, c):.9g}" for c in METRIC_COLUMNS[1:]]


@dataclass
class ExperimentResult:
    rows: list[MetricsRow]
    report: bounds.BoundReport
    config: ExperimentConfig
    w: np.ndarray
    train: LabeledDataset = field(repr=False)
    test: LabeledDataset = field(repr=False)


def load_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Training and test splits; random labels touch the training split only."""
    if cfg.data == "synthetic":
        train, test = synthetic_gaussians(cfg.m, cfg.d, cfg.separation, cfg.data_seed, cfg.m_test)
        if cfg.standardize:
            train, test = standardize_pair(train, test)
    else:
        directory = cfg.data[4:]
        train = load_mnist_dir(directory, "train", cfg.standardize)
        test = load_mnist_dir(directory, "test", cfg.standardize)
        if cfg.binary:
            train, test = binarize_labels(train), binarize_labels(test)
        if cfg.subset is not None:
            train = seeded_subset(train, cfg.subset, cfg.data_seed)
        if len(train) >= FULL_SCALE_WARNING:
            warnings.warn(f"training on {len(train)} examples; desk-scale runs use --subset", RuntimeWarning)
    if cfg.labels == "random":
        train = randomize_labels(train, cfg.label_seed)
    return train, test


def standardize_pair(train: LabeledDataset, test: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    """Shift and scale both splits by the training split's per-feature mean and std."""
    mean = train.features.mean(axis=0)
    std = np.maximum(train.features.std(axis=0), 1e-8)

    def apply(ds):
        return LabeledDataset((ds.features - mean) / std, ds.labels, ds.n_classes, ds.label_mode,
                              ds.label_seed, dict(ds.meta, standardized=True))
    return apply(train), apply(test)


def network_for(cfg: ExperimentConfig, train: LabeledDataset) -> NetworkSpec:
    if train.n_classes == 2:
        return NetworkSpec((train.d, *cfg.hidden, 1), SIGMOID_BINARY)
    return NetworkSpec((train.d, *cfg.hidden, train.n_classes), SOFTMAX_MULTICLASS)


def privacy_epsilon(cfg: ExperimentConfig, opt: LocalEntropyConfig, m: int) -> float:
    """Privacy of the learned prior mean; infinite for the noiseless algorithms."""
    if cfg.algorithm == "entropy_sgld":
        return bounds.epsilon_local_entropy(opt.beta, opt.tau, cfg.l_max, m, cfg.delta).epsilon
    if cfg.algorithm == "sgld":
        return bounds.epsilon_gibbs_posterior(opt.tau, cfg.l_max, m, cfg.delta).epsilon
    return math.inf


def evaluate_point(cfg: ExperimentConfig, spec: NetworkSpec, w: np.ndarray, opt: LocalEntropyConfig,
                   train: LabeledDataset, test: LabeledDataset, epsilon: float, rng: RngStream):
    target = GibbsTarget(w, opt.gamma, opt.tau, spec, train, BoundedCrossEntropy(cfg.l_max))
    from ..gibbs import default_eval_schedule
    ev = evaluate_gibbs(target, test, cfg.eval_chain_steps, cfg.eval_prior_samples, rng, thin=cfg.eval_thin,
                        ramp_slope=cfg.ramp_slope, schedule=default_eval_schedule(target, cfg.eval_step_scale))
    train_mean = mean_classifier_error(spec, w, train)
    report = bounds.build_report(train_mean, ev.train_err.value, ev.train_ramp.value, ev.kl, epsilon,
                                 len(train), cfg.delta, ev.train_err.std_error)
    return report, ev


def iter_experiment(cfg: ExperimentConfig) -> Iterator[tuple[MetricsRow, bounds.BoundReport, np.ndarray]]:
    cfg.validate()
    train, test = load_datasets(cfg)
    spec = network_for(cfg, train)
    opt = cfg.optimizer_config(len(train))
    epsilon = privacy_epsilon(cfg, opt, len(train))
    eval_rng = RngStream(cfg.seed).spawn(100)
    start = time.perf_counter()
    for tick, w in train_iter(cfg.algorithm, spec, train, opt, cfg.epochs, seed=cfg.seed,
                              loss_kind=BoundedCrossEntropy(cfg.l_max)):
        if tick % cfg.bound_eval_every and tick != cfg.epochs:
            continue
        report, ev = evaluate_point(cfg, spec, w, opt, train, test, epsilon, eval_rng)
        row = MetricsRow(
            tick=tick,
            train_err_mean=report.emp_err_mean,
            test_err_mean=mean_classifier_error(spec, w, test),
            train_err_gibbs=report.emp_err_gibbs,
            test_err_gibbs=ev.test_err.value,
            pac_bound=report.pac_bayes_bound, h_bound=report.h_bound, c_bound=report.c_bound,
            kl_estimate=report.kl_estimate, epsilon=epsilon,
            wall_seconds=time.perf_counter() - start,
        )
        yield row, report, w


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> ExperimentResult:
    """Run one configuration; rows are appended to ``metrics.csv`` as they are produced."""
    out_dir = out_dir or cfg.out
    cfg.validate()
    csv_file = None
    writer = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            json.dump(cfg.to_dict(), f, indent=2)
        csv_file = open(os.path.join(out_dir, "metrics.csv"), "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_file)
        writer.writerow(METRIC_COLUMNS)
        csv_file.flush()
    rows, report, w = [], None, None
    try:
        for row, report, w in iter_experiment(cfg):
            rows.append(row)
            log.info("tick %d: train %.4f test %.4f gibbs %.4f/%.4f pac %.4f", row.tick, row.train_err_mean,
                     row.test_err_mean, row.train_err_gibbs, row.test_err_gibbs, row.pac_bound)
            if writer:
                writer.writerow(row.csv_fields())
                csv_file.flush()
                os.fsync(csv_file.fileno())
    except ConfigError:
        raise
    except Exception as exc:
        raise RunAborted(f"run aborted after {len(rows)} rows: {exc}") from exc
    finally:
        if csv_file:
            csv_file.close()
    if out_dir:
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(dict(report.to_json(), algorithm=cfg.algorithm, labels=cfg.labels, tick=rows[-1].tick,
                           test_err_gibbs=rows[-1].test_err_gibbs, test_err_mean=rows[-1].test_err_mean),
                      f, indent=2)
        if cfg.plot:
            from ..plotting import plot_metrics
            plot_metrics(os.path.join(out_dir, "metrics.csv"), os.path.join(out_dir, "metrics.png"),
                         title=f"{cfg.algorithm}, {cfg.labels} labels")
    train, test = load_datasets(cfg)
    return ExperimentResult(rows, report, cfg, w, train, test)


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return [{k: (int(v) if k == "tick" else float(v)) for k, v in r.items()} for r in csv.DictReader(f)]
