import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from gmwb.closed_form import (
    TerminalQuery, build_terminal_query, conditional_moment, d_factor, gaussian_exp_moment,
    poly_factor, terminal_expectation,
)
from gmwb.contract import ContractParams, cashflow
from gmwb.market import ModelParams, simulate_step, step_moments

from conftest import zscore

cs = st.floats(-3, 3, allow_nan=False)


def test_standard_normal_moments():
    assert [gaussian_exp_moment(0.0, n) for n in range(4)] == [1.0, 0.0, 1.0, 0.0]
    assert gaussian_exp_moment(0.0, 4) == 3.0


@given(cs)
def test_poly_factor_identities(c):
    assert poly_factor(c, 0) == 1.0
    assert poly_factor(c, 1) == c
    assert poly_factor(c, 2) == pytest.approx(c * c + 1, abs=1e-12)
    assert poly_factor(c, 3) == pytest.approx(c ** 3 + 3 * c, abs=1e-12)
    assert gaussian_exp_moment(c, 3) == pytest.approx((c ** 3 + 3 * c) * math.exp(c * c / 2),
                                                      rel=1e-12, abs=1e-12)


@given(cs, st.integers(2, 6))
def test_recursion_consistency(c, n):
    lhs = gaussian_exp_moment(c, n)
    rhs = (n - 1) * gaussian_exp_moment(c, n - 2) + c * gaussian_exp_moment(c, n - 1)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_order_four_against_quadrature_and_mc():
    exact = gaussian_exp_moment(0.7, 4)
    quad, _ = integrate.quad(lambda x: x ** 4 * math.exp(0.7 * x) * stats.norm.pdf(x), -30, 30)
    assert exact == pytest.approx(quad, rel=1e-10)
    z = np.random.default_rng(42).standard_normal(10_000_000)
    assert zscore(z ** 4 * np.exp(0.7 * z), exact) < 3


def test_negative_order_rejected():
    with pytest.raises(ValueError):
        gaussian_exp_moment(0.1, -1)
    with pytest.raises(ValueError):
        conditional_moment(1.0, -1, 0, 1.0, 0.05, step_moments(ModelParams.constant(0.05, 0.2), 1))


def test_vasicek_conditional_mean(vasicek_model):
    m = step_moments(vasicek_model, 1.0)
    r = np.array([-0.01, 0.03, 0.08])
    np.testing.assert_allclose(conditional_moment(0.0, 0, 1, 1.0, r, m),
                               math.exp(-vasicek_model.kappa) * r + m.mu_r, rtol=1e-13)


def test_constant_rate_drift():
    m = step_moments(ModelParams.constant(0.05, 0.2), 0.5)
    assert conditional_moment(0.0, 1, 0, 1.3, 0.05, m) == pytest.approx(1.3 * math.exp(0.025))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3), st.floats(-0.05, 0.15), st.floats(0.05, 2))
def test_normalisation(s, r, dt):
    m = step_moments(ModelParams(r0=0.05, kappa=0.3, theta=0.04, sigma_r=0.02, rho=0.3,
                                 sigma_s=0.2, rate_mode="vasicek"), dt)
    assert conditional_moment(0.0, 0, 0, s, r, m) == pytest.approx(1.0, abs=1e-14)


def test_d_factor_matches_binomial_form(vasicek_model):
    m = step_moments(vasicek_model, 1.0)
    r = np.array([0.02, 0.05])
    for ell in (0.0, 1.0):
        for p in range(3):
            base = conditional_moment(ell, p, 0, 1.0, r, m)
            for q in range(4):
                np.testing.assert_allclose(conditional_moment(ell, p, q, 1.0, r, m),
                                           base * d_factor(ell, p, q, r, m), rtol=1e-12)


@pytest.mark.parametrize("which", ["constant", "vasicek"])
def test_every_low_order_moment_against_mc(which, vasicek_model):
    model = ModelParams.constant(0.05, 0.2) if which == "constant" else vasicek_model
    m = step_moments(model, 1.0)
    s0, r0 = 1.1, 0.04 if which == "vasicek" else 0.05
    z = np.random.default_rng(7).standard_normal((1_000_000, 3))
    s1, r1, disc = simulate_step(np.full(len(z), s0), np.full(len(z), r0), m, z)
    for ell in (0, 1):
        for p in range(4):
            for q in range(4 - p):
                if which == "constant" and q:
                    continue
                exact = float(conditional_moment(ell, p, q, s0, r0, m))
                x = disc ** ell * s1 ** p * r1 ** q
                if x.std() < 1e-14:  # deterministic, e.g. the constant-rate discount
                    assert x[0] == pytest.approx(exact, rel=1e-12), (ell, p, q)
                else:
                    assert zscore(x, exact) < 3, (ell, p, q)


# terminal expectation

def _table1_moments():
    return step_moments(ModelParams.constant(0.05, 0.2), 1.0)


def test_b_zero_branch():
    m = step_moments(ModelParams(r0=0.05, kappa=0.0349, theta=0.05, sigma_r=0.02, rho=0.3,
                                 sigma_s=0.05, rate_mode="vasicek"), 1.0)
    q = TerminalQuery(a=0.97, b=0.0, c=0.1, ell=1.0, moments=m)
    assert terminal_expectation(q) == pytest.approx(0.97 * 0.1 * math.exp(-m.mu_y + m.var_y / 2))


def test_uncorrelated_reduction_against_quadrature():
    m = _table1_moments()
    q = TerminalQuery(a=1.0, b=0.8, c=0.1, ell=1.0, moments=m)
    assert q.sigma2 == 0.0
    m1, m2, s1 = q.m1, q.m2, q.sigma1
    closed = math.exp(m1 + s1 ** 2 / 2) * stats.norm.cdf((m1 - m2 + s1 ** 2) / s1) + \
        math.exp(m2) * stats.norm.cdf((m2 - m1 - s1 ** 2) / s1)
    quad, _ = integrate.quad(lambda x: max(math.exp(m1 + s1 * x), math.exp(m2)) *
                             stats.norm.pdf(x), -12, 12, points=[(m2 - m1) / s1])
    assert terminal_expectation(q) == pytest.approx(closed, rel=1e-10)
    assert closed == pytest.approx(quad, rel=1e-9)


def test_terminal_against_mc(vasicek_model):
    contract = ContractParams(fee=0.01)
    m = step_moments(vasicek_model, 1.0)
    w, a, r, pi = 0.35, 0.2, 0.045, 0.05
    q = build_terminal_query(contract, w, a, r, pi, m)
    z = np.random.default_rng(5).standard_normal((1_000_000, 3))
    s1, _, disc = simulate_step(np.ones(len(z)), np.full(len(z), r), m, z)
    w_end = (w - pi) * math.exp(-contract.fee) * s1
    c_end = cashflow(a - pi, contract.g * contract.w0, contract.penalty)
    assert zscore(disc * np.maximum(w_end, c_end), terminal_expectation(q)) < 3


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(0, 3), st.floats(0, 1), st.sampled_from([0.0, 1.0]))
def test_max_dominates_both_branches(a, b, c, ell):
    m = step_moments(ModelParams(r0=0.05, kappa=0.0349, theta=0.05, sigma_r=0.02, rho=0.3,
                                 sigma_s=0.2, rate_mode="vasicek"), 1.0)
    if b == 0 and c == 0:
        return
    full = terminal_expectation(TerminalQuery(a, b, c, ell, m))
    only_c = a * c * math.exp(-ell * m.mu_y + ell ** 2 * m.var_y / 2)
    only_b = terminal_expectation(TerminalQuery(a, b, 0.0, ell, m)) if b > 0 else 0.0
    assert full >= only_c * (1 - 1e-12)
    assert full >= only_b * (1 - 1e-12)
    assert -1 <= TerminalQuery(a, b, c, ell, m).rho12 <= 1


def test_degenerate_spread_uses_larger_mean():
    m = step_moments(ModelParams.constant(0.05, 0.0), 1.0)
    q = TerminalQuery(a=0.95, b=1.0, c=0.5, ell=1.0, moments=m)
    assert terminal_expectation(q) == pytest.approx(0.95 * math.exp(q.m1))


def test_query_validation_and_branches(vasicek_model):
    contract = ContractParams(fee=0.01)
    m = step_moments(vasicek_model, 1.0)
    assert build_terminal_query(contract, 0.05, 0.3, 0.05, 0.1, m).b == 0.0
    assert build_terminal_query(contract, 0.5, 0.1, 0.05, 0.1, m).c == 0.0
    with pytest.raises(ValueError):
        build_terminal_query(contract, 0.5, 0.1, 0.05, 0.2, m)
    with pytest.raises(ValueError):
        TerminalQuery(a=0.0, b=1.0, c=1.0, ell=1.0, moments=m)


def test_query_coefficients_by_hand(vasicek_model):
    contract = ContractParams(fee=0.01)
    m = step_moments(vasicek_model, 1.0)
    w, a, r, pi = 0.8, 0.4, 0.06, 0.15
    q = build_terminal_query(contract, w, a, r, pi, m)
    loading = (1 - math.exp(-vasicek_model.kappa)) / vasicek_model.kappa
    assert q.a == pytest.approx(math.exp(-loading * r), rel=1e-14)
    assert q.b == pytest.approx((w - pi) * math.exp(-0.01) * math.exp(loading * r), rel=1e-14)
    assert q.c == pytest.approx(0.1 + 0.9 * (a - pi - 0.1), rel=1e-14)
