import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from entropia.bounds import (
    P_CLAMP, KLEstimate, batch_means_se, build_report, c_bound, catoni_identity_check, dp_pac_bayes_bound,
    dp_penalty, epsilon_gibbs_posterior, epsilon_local_entropy, estimate_kl_from_losses,
    estimate_kl_gibbs_prior, h_bound, kl_bernoulli, kl_inverse_lower, kl_inverse_upper, linear_pac_bayes,
    local_entropy_quadrature_1d, bound_optimizer_check,
)

M = 60000
EPS_MNIST = 0.0326598632371090413
GAUSS_KL = 0.0965735902799726547
THREE_ATOM_KL = 0.266216706828170818

probs = st.floats(0.0, 1.0)
interior = st.floats(1e-9, 1 - 1e-9)


# --- binary kl --------------------------------------------------------------------------

def test_kl_values():
    assert kl_bernoulli(0.5, 0.5) == 0.0
    assert kl_bernoulli(0.0, 0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_bernoulli(0.1, 0.2) == pytest.approx(0.0366900140347505781, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_kl_rejects_boundary_p(p):
    with pytest.raises(ValueError):
        kl_bernoulli(0.3, p)


@given(probs, interior)
def test_kl_pinsker(q, p):
    assert kl_bernoulli(q, p) >= 2 * (q - p) ** 2 - 1e-15


def test_kl_inverse_values():
    assert kl_inverse_upper(0.37, 0.0) == 0.37
    assert kl_inverse_upper(0.0, math.log(2)) == pytest.approx(0.5, abs=1e-9)
    assert kl_inverse_upper(0.0, 0.00224196) == pytest.approx(0.00223944868478586775, abs=1e-9)


def test_kl_inverse_clamps_at_top():
    assert kl_inverse_upper(0.5, 100.0) == P_CLAMP
    assert kl_inverse_upper(1.0, 0.3) == 1.0


def round_trip_tolerance(q, p):
    """1e-9, or the kl jump across one float step of ``p`` where that is coarser."""
    up = min(np.nextafter(p, 1.0), P_CLAMP)
    down = max(np.nextafter(p, 0.0), 1 - P_CLAMP)
    step = abs(kl_bernoulli(q, up) - kl_bernoulli(q, down)) / 2
    return max(1e-9, step)


@settings(max_examples=300)
@given(probs, st.floats(0.0, 5.0))
def test_kl_inverse_round_trip(q, c):
    p = kl_inverse_upper(q, c)
    assert p >= q
    if c == 0:
        assert p == q
    elif p < P_CLAMP:
        assert abs(kl_bernoulli(q, p) - c) <= round_trip_tolerance(q, p)


@given(probs, st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_kl_inverse_monotone_in_c(q, c1, c2):
    lo, hi = sorted((c1, c2))
    assert kl_inverse_upper(q, lo) <= kl_inverse_upper(q, hi) + 1e-12


@given(probs, probs, st.floats(0.0, 3.0))
def test_kl_inverse_monotone_in_q(q1, q2, c):
    lo, hi = sorted((q1, q2))
    assert kl_inverse_upper(lo, c) <= kl_inverse_upper(hi, c) + 1e-12


@given(probs, st.floats(1e-6, 3.0))
def test_kl_inverse_lower_brackets(q, c):
    low = kl_inverse_lower(q, c)
    assert 0.0 <= low <= q
    if 0 < low < q:
        assert abs(kl_bernoulli(q, low) - c) <= round_trip_tolerance(q, low)


# --- linear PAC-Bayes ----------------------------------------------------------------

def test_linear_pac_bayes_value():
    assert linear_pac_bayes(0.0, 0.0, 100, 1.0, math.exp(-1), 1.0) == pytest.approx(0.02, abs=1e-15)


def test_linear_pac_bayes_rejects_small_lambda():
    with pytest.raises(ValueError):
        linear_pac_bayes(0.1, 0.0, 100, 0.5, 0.05)


@given(st.floats(0, 1), st.floats(0, 50), st.integers(1, 10**6), st.floats(0.51, 100), st.floats(1e-6, 1))
def test_linear_pac_bayes_dominates_emp_risk(emp, kl, m, lam, delta):
    assert linear_pac_bayes(emp, kl, m, lam, delta) >= emp


def test_linear_pac_bayes_grows_past_minimiser():
    lams = np.linspace(0.6, 200, 400)
    vals = np.array([linear_pac_bayes(0.1, 2.0, 1000, lam, 0.05) for lam in lams])
    i = int(vals.argmin())
    assert np.all(np.diff(vals[i:]) > 0)


# --- privacy ------------------------------------------------------------------------

def test_epsilon_mnist_configuration():
    b = epsilon_local_entropy(1.0, math.sqrt(M), 4.0, M)
    assert b.epsilon == pytest.approx(EPS_MNIST, abs=1e-12)
    assert b.sensitivity == pytest.approx(4 * math.sqrt(M) / M)
    assert b.derivation["m"] == M


def test_epsilon_arithmetic():
    assert epsilon_local_entropy(1.0, 2000.0, 4.0, 50000).epsilon == pytest.approx(0.32, abs=1e-15)
    assert epsilon_local_entropy(1.0, 0.0, 4.0, 100).epsilon == 0.0
    assert epsilon_gibbs_posterior(0.0, 4.0, 100).epsilon == 0.0
    assert epsilon_gibbs_posterior(math.sqrt(M), 4.0, M).epsilon == pytest.approx(EPS_MNIST, abs=1e-12)


@given(st.integers(1, 10**7), st.floats(0.7, 10))
def test_gibbs_and_local_entropy_agree_at_unit_beta(m, l_max):
    tau = math.sqrt(m)
    assert epsilon_gibbs_posterior(tau, l_max, m).epsilon == epsilon_local_entropy(1.0, tau, l_max, m).epsilon


def test_dp_penalty_value():
    assert dp_penalty(M, 8 / math.sqrt(M), 0.05) == pytest.approx(0.0021333333333333334, abs=1e-15)


def test_dp_pac_bayes_mnist_example():
    budget, upper, lower = dp_pac_bayes_bound(0.0, 0.0, M, EPS_MNIST, 0.05)
    assert budget == pytest.approx(0.00223656995168603440, abs=1e-12)
    assert upper == pytest.approx(0.00223407069271470427, abs=1e-9)
    assert lower == 0.0


def test_dp_pac_bayes_vanishes_for_large_m():
    _, upper, _ = dp_pac_bayes_bound(0.0, 0.0, 10**8, 0.0, 0.05)
    assert upper < 1e-5


def test_dp_pac_bayes_without_privacy_is_vacuous():
    budget, upper, lower = dp_pac_bayes_bound(0.1, 1.0, 1000, math.inf)
    assert (budget, upper, lower) == (math.inf, 1.0, 0.0)


@settings(max_examples=100)
@given(st.floats(0, 0.9), st.floats(0, 20), st.floats(0, 20), st.floats(0, 0.1), st.floats(0, 0.1),
       st.floats(1e-4, 0.5), st.floats(1e-4, 0.5))
def test_dp_pac_bayes_monotone(emp, k1, k2, e1, e2, d1, d2):
    m = 5000
    ka, kb = sorted((k1, k2))
    ea, eb = sorted((e1, e2))
    da, db = sorted((d1, d2))
    base = dp_pac_bayes_bound(emp, ka, m, ea, db)[1]
    assert dp_pac_bayes_bound(emp, kb, m, ea, db)[1] >= base - 1e-12
    assert dp_pac_bayes_bound(emp, ka, m, eb, db)[1] >= base - 1e-12
    assert dp_pac_bayes_bound(emp, ka, m, ea, da)[1] >= base - 1e-12


def test_dp_pac_bayes_limit_small_epsilon():
    m, kl, delta = 20000, 3.0, 0.05
    budget, upper, _ = dp_pac_bayes_bound(0.05, kl, m, 1e-9, delta)
    expected = (kl + math.log(2 * math.sqrt(m)) + 2 * math.log(3 / delta)) / m
    assert budget == pytest.approx(expected, rel=1e-14)
    assert upper == pytest.approx(kl_inverse_upper(0.05, expected), abs=1e-12)


# --- H / C bounds ---------------------------------------------------------------------

def test_h_bound_slack():
    assert h_bound(0.0, EPS_MNIST, M, 0.05) == pytest.approx(0.0367423461417476715, abs=1e-12)
    assert math.sqrt(math.log(3 / 0.05) / M) == pytest.approx(0.00826069464615627899, abs=1e-15)


def test_c_bound_value():
    assert c_bound(0.0, EPS_MNIST, M, 0.05) == pytest.approx(0.0065, abs=1e-12)
    assert c_bound(0.0, 0.0, 10**8, 0.05) < 1e-4


def test_h_bound_rejects_bad_delta():
    with pytest.raises(ValueError):
        h_bound(0.0, 0.0, 100, 3.0)


def test_bounds_clamp_and_flag():
    assert h_bound(1.0, 0.01, 1000) == 1.0
    kl = KLEstimate(0.0, 0.0, 0.0, 0.0, 0.0)
    rep = build_report(1.0, 1.0, 1.0, kl, 0.01, 1000)
    assert rep.h_vacuous and rep.c_vacuous and rep.vacuous
    assert rep.h_bound == rep.c_bound == rep.pac_bayes_bound == 1.0


@given(st.floats(0, 1), st.floats(0, 1), st.integers(10, 10**6), st.floats(1e-4, 0.99))
def test_h_and_c_dominate_emp(emp, eps, m, delta):
    assert h_bound(emp, eps, m, delta) >= min(emp, 1.0)
    assert c_bound(emp, eps, m, delta) >= min(emp, 1.0)


def test_report_json_is_flat_and_versioned():
    kl = KLEstimate(0.4, 0.05, 0.4, -1.0, -1.4)
    rep = build_report(0.1, 0.12, 0.13, kl, math.inf, 2000)
    d = json.loads(json.dumps(rep.to_json()))
    assert d["schema_version"] == 1 and d["optimistic"] is True
    assert d["h_bound"] == 1.0 and d["epsilon"] is None and d["vacuous"] is True
    assert all(not isinstance(v, (dict, list)) for v in d.values())


# --- KL estimation -------------------------------------------------------------------

def test_kl_estimate_constant_loss():
    est = estimate_kl_from_losses(np.full(200, 3.0), np.full(200, 3.0), chain_iid=True)
    assert est.raw == pytest.approx(0.0, abs=1e-14)
    assert est.gibbs_term == -3.0 and est.log_partition == pytest.approx(-3.0)


def test_kl_estimate_sample_floor():
    with pytest.raises(ValueError):
        estimate_kl_from_losses(np.zeros(99), np.zeros(500))


def test_kl_estimate_gaussian_instance():
    rng = np.random.default_rng(0)
    k = 10**4
    est = estimate_kl_gibbs_prior(lambda w: 0.5 * w ** 2, rng.normal(0, math.sqrt(0.5), k), rng.normal(0, 1, k))
    assert abs(est.raw - GAUSS_KL) < 3 * est.std_error


def test_kl_estimate_three_atoms():
    rng = np.random.default_rng(1)
    ell = np.array([0.0, 1.0, 2.0])
    gibbs = np.exp(-ell) / np.exp(-ell).sum()
    k = 10**4
    est = estimate_kl_from_losses(ell[rng.choice(3, k, p=gibbs)], ell[rng.integers(0, 3, k)], chain_iid=True)
    exact = float(np.sum(gibbs * np.log(gibbs * 3)))
    assert exact == pytest.approx(THREE_ATOM_KL, abs=1e-14)
    assert abs(est.raw - exact) < 3 * est.std_error


def test_batch_means_se_iid_scale():
    x = np.random.default_rng(2).standard_normal(40000)
    assert batch_means_se(x) == pytest.approx(1 / math.sqrt(40000), rel=0.3)


# --- identities -------------------------------------------------------------------------

def test_catoni_examples():
    P = np.full(3, 1 / 3)
    r = np.array([0.0, 1.0, 2.0])
    gibbs = P * np.exp(-r) / np.sum(P * np.exp(-r))
    assert catoni_identity_check(P, r, gibbs) < 1e-12
    assert catoni_identity_check(P, r, P) < 1e-12
    assert catoni_identity_check(P, r, [0.5, 0.3, 0.2]) < 1e-12


def test_catoni_support_violation():
    with pytest.raises(ValueError):
        catoni_identity_check([0.5, 0.5, 0.0], [0, 1, 2], [0.3, 0.3, 0.4])


@given(st.integers(0, 2**31 - 1))
def test_catoni_randomised(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    P = rng.dirichlet(np.ones(n))
    Q = rng.dirichlet(np.ones(n))
    r = rng.uniform(-5, 5, n)
    assert catoni_identity_check(P, r, Q) < 1e-12


def test_quadrature_zero_risk():
    le = local_entropy_quadrature_1d(0.7, 2.0, 3.0, lambda v: np.zeros_like(v))
    assert le.F == pytest.approx(0.5 * math.log(2 * math.pi / 6.0), abs=1e-12)
    assert le.dF == pytest.approx(0.0, abs=1e-12)
    assert le.mean == pytest.approx(0.7, abs=1e-12)
    assert le.kl_to_prior == pytest.approx(0.0, abs=1e-12)


def test_quadrature_quadratic_mean():
    gamma, w = 0.4, 1.5
    le = local_entropy_quadrature_1d(w, gamma, 5.0, lambda v: 0.5 * v ** 2, lambda v: v)
    assert le.mean == pytest.approx(gamma * w / (1 + gamma), abs=1e-10)


@pytest.mark.parametrize("risk,grad", [
    (lambda v: 0.5 * v ** 2, lambda v: v),
    (lambda v: np.sin(3 * v), lambda v: 3 * np.cos(3 * v)),
    (lambda v: np.log1p(np.exp(-v)), lambda v: -1 / (1 + np.exp(v))),
])
def test_quadrature_gradient_identity(risk, grad):
    gamma, tau, w = 0.8, 4.0, 0.3
    le = local_entropy_quadrature_1d(w, gamma, tau, risk, grad)
    assert abs(le.dF - tau * gamma * (le.mean - w)) < 1e-9
    h = 1e-5
    fd = (local_entropy_quadrature_1d(w + h, gamma, tau, risk, grad).F
          - local_entropy_quadrature_1d(w - h, gamma, tau, risk, grad).F) / (2 * h)
    assert le.dF == pytest.approx(fd, abs=1e-6)


def test_bound_optimizer_zero_risk_all_optimal():
    grid = np.linspace(-1, 1, 21)
    res = bound_optimizer_check(lambda v: np.zeros_like(v), grid, 1.0, 1.0, 1.0, 100)
    assert res.match and res.argmax_F == list(range(21))


def test_bound_optimizer_quadratic_optimum_at_zero():
    grid = np.linspace(-1, 1, 41)
    res = bound_optimizer_check(lambda v: np.minimum(0.5 * v ** 2, 1.0), grid, 1.0, 2.0, 1.0, 50)
    assert res.match and res.argmax_F == [20]


def double_well(v):
    return 1 - 0.9 * np.exp(-200 * (v + 1) ** 2) - 0.85 * np.exp(-2 * (v - 1) ** 2)


def double_well_grad(v):
    return 360 * (v + 1) * np.exp(-200 * (v + 1) ** 2) + 3.4 * (v - 1) * np.exp(-2 * (v - 1) ** 2)


@pytest.mark.parametrize("gamma,where", [(0.2, 1.0), (50.0, -1.0)])
def test_bound_optimizer_double_well(gamma, where):
    # the deeper, narrow well at -1 wins only when the prior is tight
    grid = np.linspace(-2, 2, 81)
    assert grid[np.argmin(double_well(grid))] == -1.0
    res = bound_optimizer_check(double_well, grid, gamma, 1.0, 1.0, 20, risk_grad=double_well_grad)
    assert res.match
    assert grid[res.argmax_F] == pytest.approx([where])
