"""Generalization-bound and privacy arithmetic.

Binary kl and its inversion, the linear PAC-Bayes bound, the PAC-Bayes bound
for differentially private data-dependent priors, the Hoeffding- and
Chernoff-style bounds for private learners, privacy of exponential-mechanism
samples, and Monte Carlo estimation of ``KL(P_exp(-l) || P)``.

Bounds are clamped to ``[0, 1]``; callers that need the raw value pass
``clamp=False`` and decide vacuity themselves.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, rel_entr

P_CLAMP = 1.0 - 1e-12
SCHEMA_VERSION = 1


# --- binary kl ------------------------------------------------------------------

def kl_bernoulli(q: float, p: float) -> float:
    """``kl(q || p)`` between Bernoulli distributions, with ``0 log 0 = 0``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return float(max(rel_entr(q, p) + rel_entr(1.0 - q, 1.0 - p), 0.0))


def _kl_dp(q, p):
    return (p - q) / (p * (1.0 - p))


def _solve_kl(q: float, c: float, near: float, far: float, tol: float) -> float:
    """Root of ``kl(q || p) = c`` between ``near`` (kl = 0 side) and ``far`` (kl > c side).

    Bisection to 1e-6, then at most 20 Newton steps; whenever Newton leaves the
    bracket or stalls, bisection runs down to adjacent floats.
    """
    f = lambda p: kl_bernoulli(q, p) - c
    inside, outside = near, far
    while abs(outside - inside) > 1e-6:
        mid = 0.5 * (inside + outside)
        if f(mid) > 0:
            outside = mid
        else:
            inside = mid
    p = 0.5 * (inside + outside)
    for _ in range(20):
        fp = f(p)
        if abs(fp) < tol * 1e-3:
            return p
        if fp > 0:
            outside = p
        else:
            inside = p
        deriv = _kl_dp(q, p)
        nxt = p - fp / deriv if deriv != 0 else math.nan
        lo, hi = sorted((inside, outside))
        p = nxt if lo < nxt < hi else 0.5 * (lo + hi)
    while True:
        mid = 0.5 * (inside + outside)
        if mid == inside or mid == outside:
            break
        if f(mid) > 0:
            outside = mid
        else:
            inside = mid
    return inside if abs(f(inside)) <= abs(f(outside)) else outside


def kl_inverse_upper(q: float, c: float, tol: float = 1e-9) -> float:
    """Largest ``p`` in ``[q, 1)`` with ``kl(q || p) <= c``, capped at ``1 - 1e-12``."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if q >= P_CLAMP:
        return 1.0
    if c == 0.0:
        return float(q)
    if kl_bernoulli(q, P_CLAMP) <= c:
        return P_CLAMP
    return _solve_kl(q, c, float(q), P_CLAMP, tol)


def kl_inverse_lower(q: float, c: float, tol: float = 1e-9) -> float:
    """Smallest ``p`` in ``(0, q]`` with ``kl(q || p) <= c``; 0 when even ``1e-12`` qualifies."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    floor = 1.0 - P_CLAMP
    if q <= floor:
        return 0.0
    if c == 0.0:
        return float(q)
    if kl_bernoulli(q, floor) <= c:
        return 0.0
    return _solve_kl(q, c, min(float(q), P_CLAMP), floor, tol)


# --- PAC-Bayes --------------------------------------------------------------------

def linear_pac_bayes(emp_risk: float, kl_div: float, m: int, lam: float, delta: float,
                     l_max: float = 1.0) -> float:
    """Linear (Catoni-style) PAC-Bayes bound for a loss with range of length ``l_max``."""
    if lam <= 0.5:
        raise ValueError(f"lambda must exceed 1/2, got {lam}")
    if emp_risk < 0 or kl_div < 0:
        raise ValueError("empirical risk and KL must be nonnegative")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    return (emp_risk + lam * l_max / m * (kl_div + math.log(1.0 / delta))) / (1.0 - 1.0 / (2.0 * lam))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.05
    sensitivity: float = 0.0
    derivation: dict = field(default_factory=dict)


def epsilon_local_entropy(beta: float, tau: float, l_max: float, m: int, delta: float = 0.05) -> PrivacyBudget:
    """Privacy of one sample from ``exp(beta * F)``: ``2 * beta * l_max * tau / m``."""
    if beta < 0 or tau < 0 or l_max <= 0 or m < 1:
        raise ValueError("beta, tau must be nonnegative, l_max positive and m >= 1")
    sens = l_max * tau / m
    eps = 2.0 * beta * l_max * tau / m
    return PrivacyBudget(eps, delta, sens, dict(mechanism="local_entropy", beta=beta, tau=tau, l_max=l_max, m=m))


def epsilon_gibbs_posterior(tau: float, l_max: float, m: int, delta: float = 0.05) -> PrivacyBudget:
    """Privacy of one sample from ``P_exp(-tau * R_S)``: ``2 * tau * l_max / m``."""
    if tau < 0 or l_max <= 0 or m < 1:
        raise ValueError("tau must be nonnegative, l_max positive and m >= 1")
    sens = l_max / m
    return PrivacyBudget(2.0 * l_max * tau / m, delta, sens, dict(mechanism="gibbs_posterior", tau=tau, l_max=l_max, m=m))


def dp_penalty(m: int, epsilon: float, delta: float) -> float:
    """Additive privacy term ``2 max{ln(3/delta), m eps^2} / m``."""
    return 2.0 * max(math.log(3.0 / delta), m * epsilon ** 2) / m


def dp_pac_bayes_bound(emp_err: float, kl_div: float, m: int, epsilon: float,
                       delta: float = 0.05) -> tuple[float, float, float]:
    """Return ``(kl_budget, risk_upper, risk_lower)`` for an eps-private data-dependent prior."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if epsilon < 0 or kl_div < 0:
        raise ValueError("epsilon and KL must be nonnegative")
    if math.isinf(epsilon):
        return math.inf, 1.0, 0.0
    budget = (kl_div + math.log(2.0 * math.sqrt(m)) + m * dp_penalty(m, epsilon, delta)) / m
    return budget, kl_inverse_upper(emp_err, budget), kl_inverse_lower(emp_err, budget)


def _eps_bar(epsilon, m, delta):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return max(epsilon, math.sqrt(math.log(3.0 / delta) / m))


def h_bound(emp_ramp_risk: float, epsilon: float, m: int, delta: float = 0.05, clamp: bool = True) -> float:
    """Hoeffding-style risk bound for an eps-private learner."""
    raw = emp_ramp_risk + _eps_bar(epsilon, m, delta) + m ** -0.5
    return min(raw, 1.0) if clamp else raw


def c_bound(emp_ramp_risk: float, epsilon: float, m: int, delta: float = 0.05, clamp: bool = True) -> float:
    """Chernoff-style risk bound for an eps-private learner."""
    eb = _eps_bar(epsilon, m, delta)
    raw = emp_ramp_risk + math.sqrt(6.0 * emp_ramp_risk) * (eb + m ** -0.5) + 6.0 * (eb ** 2 + 1.0 / m)
    return min(raw, 1.0) if clamp else raw


# --- KL estimation ------------------------------------------------------------------

@dataclass(frozen=True)
class KLEstimate:
    value: float
    std_error: float
    raw: float
    gibbs_term: float
    log_partition: float


def batch_means_se(x: np.ndarray, n_batches: int | None = None) -> float:
    """Standard error of the mean of a (possibly autocorrelated) sequence by batch means."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return 0.0
    b = n_batches or max(2, min(50, int(math.sqrt(n))))
    b = min(b, n)
    size = n // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(b))


def estimate_kl_from_losses(chain_losses, prior_losses, min_samples: int = 100,
                            chain_iid: bool = False) -> KLEstimate:
    """``KL(P_exp(-l) || P) = E_Gibbs[-l] - log P[exp(-l)]`` from two sample sets.

    ``chain_losses`` are ``l`` evaluated on samples targeting the Gibbs measure;
    ``prior_losses`` are ``l`` on i.i.d. prior draws.  The log-mean-exp term is a
    high-probability lower bound on the log partition function, so the estimate
    errs upward.  The returned value is clamped at 0; ``raw`` is unclamped.
    """
    a = np.asarray(chain_losses, dtype=np.float64)
    b = np.asarray(prior_losses, dtype=np.float64)
    if a.shape[0] < min_samples or b.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} chain and prior samples, got {a.shape[0]} and {b.shape[0]}")
    gibbs_term = -a.mean()
    log_z = logsumexp(-b) - math.log(b.shape[0])
    se_a = a.std(ddof=1) / math.sqrt(a.shape[0]) if chain_iid else batch_means_se(a)
    weights = np.exp(-b - log_z)
    se_b = weights.std(ddof=1) / math.sqrt(b.shape[0])
    raw = gibbs_term - log_z
    return KLEstimate(max(raw, 0.0), math.hypot(se_a, se_b), raw, gibbs_term, log_z)


def estimate_kl_gibbs_prior(loss_fn: Callable[[np.ndarray], float], chain_samples, prior_samples,
                            min_samples: int = 100) -> KLEstimate:
    """Evaluate ``l = loss_fn(w)`` on both sample sets and estimate the KL."""
    chain = [loss_fn(w) for w in chain_samples]
    prior = [loss_fn(w) for w in prior_samples]
    return estimate_kl_from_losses(chain, prior, min_samples)


# --- exact identities on small problems -----------------------------------------------

def catoni_identity_check(P, r, Q) -> float:
    """|-log P[e^-r] - (Q[r] + KL(Q||P) - KL(Q||P_e^-r))| by exact enumeration."""
    P = np.asarray(P, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if not (P.shape == r.shape == Q.shape):
        raise ValueError("P, r and Q must have the same number of atoms")
    if np.any(P < 0) or np.any(Q < 0):
        raise ValueError("probabilities must be nonnegative")
    if np.any((Q > 0) & (P == 0)):
        raise ValueError("Q is not absolutely continuous with respect to P")
    P = P / P.sum()
    Q = Q / Q.sum()
    support = P > 0
    log_z = logsumexp(-r[support], b=P[support])
    gibbs = np.zeros_like(P)
    gibbs[support] = P[support] * np.exp(-r[support] - log_z)
    lhs = -log_z
    kl_qp = rel_entr(Q, P).sum()
    kl_qg = rel_entr(Q, gibbs).sum()
    rhs = float(Q @ np.where(Q > 0, r, 0.0)) + kl_qp - kl_qg
    return float(abs(lhs - rhs))


@dataclass
class LocalEntropy1D:
    F: float
    dF: float
    mean: float
    expected_risk: float
    kl_to_prior: float


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gl_moments(log_g, extras, lo, hi, panels):
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    v = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    lg = log_g(v)
    shift = lg.max()
    g = np.exp(lg - shift) * wts
    return shift, np.array([g.sum()] + [(f(v) * g).sum() for f in extras])


def local_entropy_quadrature_1d(center: float, gamma: float, tau: float, risk: Callable,
                                risk_grad: Callable | None = None, width: float = 12.0,
                                tol: float = 1e-13, max_panels: int = 1 << 14) -> LocalEntropy1D:
    """Quadrature oracle for the 1-D local entropy around ``center``.

    ``risk`` (and ``risk_grad``) must accept numpy arrays.  Composite 20-point
    Gauss-Legendre over a ``width``-sigma window, doubling the panel count until
    successive estimates agree to ``tol``.

    Returns ``F = log int exp(-tau risk(v) - tau gamma (v - center)^2 / 2) dv``,
    ``dF/dw = -tau E_G[risk'(v)]`` (integration by parts), ``E_G[v]``, and
    ``E_G[risk]`` and ``KL(G || N(center, 1/(tau gamma)))`` for bound evaluation.
    """
    if gamma <= 0 or tau <= 0:
        raise ValueError("gamma and tau must be positive")
    sigma = 1.0 / math.sqrt(tau * gamma)
    lo, hi = center - width * sigma, center + width * sigma
    if risk_grad is None:
        h = 1e-3 * sigma
        risk_grad = lambda v: (-risk(v + 2 * h) + 8 * risk(v + h) - 8 * risk(v - h) + risk(v - 2 * h)) / (12 * h)
    log_g = lambda v: -tau * np.asarray(risk(v), dtype=np.float64) - 0.5 * tau * gamma * (v - center) ** 2
    extras = (lambda v: v - center, risk_grad, risk)

    panels = 64
    shift, prev = _gl_moments(log_g, extras, lo, hi, panels)
    while True:
        panels *= 2
        shift2, cur = _gl_moments(log_g, extras, lo, hi, panels)
        cur = cur * math.exp(shift2 - shift)
        ratios_prev = prev[1:] / prev[0]
        ratios_cur = cur[1:] / cur[0]
        scale = np.maximum(np.array([sigma, 1.0, 1.0]), np.abs(ratios_cur))
        if abs(cur[0] / prev[0] - 1) < tol and np.all(np.abs(ratios_cur - ratios_prev) <= tol * scale):
            break
        if panels >= max_panels:
            raise ArithmeticError(
                f"quadrature did not converge: relative change {abs(cur[0] / prev[0] - 1):.3g} at {panels} panels"
            )
        prev = cur
    z, m1, mg, mr = cur[0], cur[1] / cur[0], cur[2] / cur[0], cur[3] / cur[0]
    F = math.log(z) + shift
    log_z_prior = math.log(math.sqrt(2 * math.pi) * sigma)
    kl = -tau * mr - (F - log_z_prior)
    return LocalEntropy1D(F, -tau * float(mg), center + float(m1), float(mr), max(kl, 0.0))


@dataclass
class OptimizerMatch:
    argmax_F: list
    argmin_bound: list
    match: bool
    F: np.ndarray
    bound: np.ndarray


def _optimal_set(values, maximize, rtol=1e-9):
    values = np.asarray(values)
    best = values.max() if maximize else values.min()
    slack = rtol * max(1.0, abs(best))
    hit = values >= best - slack if maximize else values <= best + slack
    return [int(i) for i in np.flatnonzero(hit)]


def bound_optimizer_check(risk: Callable[[float], float], grid: Sequence[float], gamma: float, lam: float,
                          l_max: float, m: int, delta: float = 0.05,
                          risk_grad: Callable[[float], float] | None = None) -> OptimizerMatch:
    """Grid check that maximising local entropy minimises the linear PAC-Bayes bound.

    ``tau = m / (lam * l_max)``.  At each grid point ``w`` the bound is evaluated
    at the Gibbs posterior of the prior ``N(w, 1/(tau gamma))`` with the posterior's
    expected risk and KL obtained by quadrature, independently of ``F``.
    """
    tau = m / (lam * l_max)
    F = np.empty(len(grid))
    bound = np.empty(len(grid))
    for i, w in enumerate(grid):
        le = local_entropy_quadrature_1d(float(w), gamma, tau, risk, risk_grad)
        F[i] = le.F
        bound[i] = linear_pac_bayes(le.expected_risk, le.kl_to_prior, m, lam, delta, l_max)
    amax = _optimal_set(F, True)
    amin = _optimal_set(bound, False)
    return OptimizerMatch(amax, amin, amax == amin, F, bound)


# --- reporting ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    emp_err_mean: float
    emp_err_gibbs: float
    kl_estimate: float
    kl_std_error: float
    pac_bayes_bound: float
    h_bound: float
    c_bound: float
    epsilon: float
    m: int
    delta: float
    emp_err_gibbs_std_error: float = 0.0
    emp_ramp_gibbs: float = float("nan")
    pac_lower: float = 0.0
    vacuous: bool = False
    h_vacuous: bool = False
    c_vacuous: bool = False
    optimistic: bool = True
    c_bound_jensen: bool = True
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, (np.bool_, np.floating, np.integer)):
                v = v.item()
            if isinstance(v, float) and not math.isfinite(v):
                v = None
            out[k] = v
        return out


def build_report(emp_err_mean: float, emp_err_gibbs: float, emp_ramp_gibbs: float, kl: KLEstimate,
                 epsilon: float, m: int, delta: float = 0.05, gibbs_se: float = 0.0) -> BoundReport:
    """Assemble all bounds at one evaluation point.

    The C-bound takes the posterior-mean ramp risk inside the square root, which
    upper-bounds the posterior mean of the per-sample bound.
    """
    _, upper, lower = dp_pac_bayes_bound(emp_err_gibbs, kl.value, m, epsilon, delta)
    if math.isinf(epsilon):
        h_raw = c_raw = math.inf
    else:
        h_raw = h_bound(emp_ramp_gibbs, epsilon, m, delta, clamp=False)
        c_raw = c_bound(emp_ramp_gibbs, epsilon, m, delta, clamp=False)
    return BoundReport(
        emp_err_mean=emp_err_mean, emp_err_gibbs=emp_err_gibbs,
        kl_estimate=kl.value, kl_std_error=kl.std_error,
        pac_bayes_bound=min(upper, 1.0), h_bound=min(h_raw, 1.0), c_bound=min(c_raw, 1.0),
        epsilon=epsilon, m=m, delta=delta, emp_err_gibbs_std_error=gibbs_se,
        emp_ramp_gibbs=emp_ramp_gibbs, pac_lower=lower,
        vacuous=bool(upper >= 1.0 - 1e-9), h_vacuous=bool(h_raw >= 1.0), c_vacuous=bool(c_raw >= 1.0),
    )
