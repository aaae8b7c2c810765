"""Grid sweeps over (gamma, tau, beta) and label modes, one process per point."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .experiment import ExperimentConfig, run_experiment

log = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "point", "algorithm", "labels", "gamma", "tau", "beta", "status", "tick",
    "train_err_mean", "test_err_mean", "train_err_gibbs", "test_err_gibbs",
    "pac_bound", "h_bound", "c_bound", "kl_estimate", "epsilon", "error",
)
THREADS_ENV = "ENTROPIA_THREADS"


@dataclass(frozen=True)
class SweepPoint:
    index: int
    config: ExperimentConfig


def grid_points(base: ExperimentConfig, gammas=(), taus=(), betas=(), labels=(),
                tau_beta: float | None = None) -> list[SweepPoint]:
    """Cartesian product of the given axes; an empty axis keeps the base value.

    With ``tau_beta`` set, beta is derived as ``tau_beta / tau`` so the product
    (and hence the privacy budget) is held fixed across the tau axis.
    """
    gammas = list(gammas) or [base.gamma]
    taus = list(taus) or [base.tau]
    labels = list(labels) or [base.labels]
    if tau_beta is not None:
        if betas:
            raise ValueError("give either betas or tau_beta, not both")
        combos = [(g, t, None, lab) for g, t, lab in itertools.product(gammas, taus, labels)]
    else:
        betas = list(betas) or [base.beta]
        combos = list(itertools.product(gammas, taus, betas, labels))
    points = []
    for i, (g, t, b, lab) in enumerate(combos):
        if b is None:
            b = tau_beta / float(t)
        points.append(SweepPoint(i, dataclasses.replace(base, gamma=float(g), tau=t, beta=float(b), labels=lab)))
    return points


def _run_point(point: SweepPoint, out_dir: str) -> dict:
    cfg = point.config
    row = dict(point=point.index, algorithm=cfg.algorithm, labels=cfg.labels, gamma=cfg.gamma,
               tau=cfg.tau, beta=cfg.beta)
    try:
        result = run_experiment(dataclasses.replace(cfg, out=None, plot=False),
                                os.path.join(out_dir, f"point_{point.index:03d}"))
    except Exception as exc:  # recorded in the sweep table, the sweep goes on
        log.error("point %d failed: %s", point.index, exc)
        detail = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return dict(row, status="failed", error=detail)
    last = result.rows[-1]
    row["tau"] = cfg.resolve_tau(len(result.train))
    return dict(row, status="ok", error="", **dataclasses.asdict(last))


def default_workers() -> int:
    cores = os.cpu_count() or 1
    try:
        return max(1, int(os.environ.get(THREADS_ENV, cores)))
    except ValueError:
        return cores


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else str(v)


def run_sweep(points: list[SweepPoint], out_dir: str, workers: int | None = None) -> list[dict]:
    """Run every point and write ``sweep.csv``; an empty grid writes the header only."""
    os.makedirs(out_dir, exist_ok=True)
    workers = workers or default_workers()
    path = os.path.join(out_dir, "sweep.csv")
    results = []
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, SWEEP_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        f.flush()
        if not points:
            return results
        if workers == 1:
            stream = (_run_point(p, out_dir) for p in points)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            stream = pool.map(_run_point, points, itertools.repeat(out_dir))
        try:
            for res in stream:
                results.append(res)
                writer.writerow({k: _fmt(v) for k, v in res.items()})
                f.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    return results
