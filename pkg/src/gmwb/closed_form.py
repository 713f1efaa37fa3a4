"""Closed-form conditional expectations for regress-later valuation.

Provides the Gaussian exponential moments ``E(c, n) = E[N^n exp(cN)]``, the
discounted conditional moments

    B(l, p, q) = E[exp(-l int r) S(t+dt)^p r(t+dt)^q | S(t), r(t)]

and the conditional expectation of the discounted terminal payoff over the
last step, which reduces to the moment generating function of the maximum of
two correlated Gaussians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .contract import ContractParams, cashflow, guaranteed_withdrawal
from .market import StepMoments


def gaussian_exp_moment(c: float, n: int) -> float:
    """E[N^n exp(cN)] for a standard normal N."""
    if n < 0 or int(n) != n:
        raise ValueError("n must be a nonnegative integer")
    return math.exp(0.5 * c * c) * poly_factor(c, n)


def poly_factor(c, q: int):
    """P(c, q) = e^{-c^2/2} E(c, q), a polynomial in c.

    Built from P(c,0)=1, P(c,1)=c and P(c,q) = (q-1) P(c,q-2) + c P(c,q-1),
    which reproduces (c^2+1) and (c^3+3c) for q = 2, 3.
    """
    c = np.asarray(c, dtype=float)
    if q == 0:
        return np.ones_like(c) if c.ndim else 1.0
    prev, cur = np.ones_like(c), c
    for k in range(2, q + 1):
        prev, cur = cur, (k - 1) * prev + c * cur
    return cur if cur.ndim else float(cur)


def conditional_moment(ell: float, p: int, q: int, s, r, m: StepMoments):
    """B(ell, p, q) given the state ``(s, r)`` at the start of a step.

    ``s`` and ``r`` may be arrays; any real ``ell`` is accepted.
    """
    if p < 0 or q < 0 or int(p) != p or int(q) != q:
        raise ValueError("powers p and q must be nonnegative integers")
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    sy, se, sr = m.sd_y, m.sd_e, m.sd_r
    d = p - ell
    log_pref = d * (m.mu_y + m.loading * r) + p * m.mu_e
    var = d * d * m.var_y + p * p * m.var_e + 2.0 * p * d * sy * se * m.rho_ye
    pref = s ** p * np.exp(log_pref + 0.5 * var)
    if q == 0:
        return pref
    c = d * sy * m.rho_ry + p * se * m.rho_re
    mean_r = m.decay * r + m.mu_r
    # binomial expansion of (mean_r + sd_r N_R)^q against the tilted measure
    tot = 0.0
    for k in range(q + 1):
        tot = tot + math.comb(q, k) * mean_r ** (q - k) * sr ** k * poly_factor(c, k)
    return pref * tot


def d_factor(ell: float, p: int, q: int, r, m: StepMoments):
    """The explicit D(ell, p, q) polynomials for q <= 3."""
    x = m.decay * np.asarray(r, dtype=float) + m.mu_r + (p - ell) * m.sd_r * m.sd_y * m.rho_ry \
        + p * m.sd_r * m.sd_e * m.rho_re
    if q == 0:
        return np.ones_like(x)
    if q == 1:
        return x
    if q == 2:
        return x * x + m.var_r
    if q == 3:
        return x ** 3 + 3.0 * m.var_r * x
    raise ValueError("explicit D factors are tabulated for q <= 3 only")


@dataclass(frozen=True)
class TerminalQuery:
    a: float
    b: float
    c: float
    ell: float
    moments: StepMoments

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if self.b < 0 or self.c < 0:
            raise ValueError("b and c must be nonnegative")

    @property
    def sigma1(self) -> float:
        m, l = self.moments, self.ell
        v = (1 - l) ** 2 * m.var_y + m.var_e + 2 * (1 - l) * m.rho_ye * m.sd_y * m.sd_e
        return math.sqrt(max(v, 0.0))

    @property
    def sigma2(self) -> float:
        return self.ell * self.moments.sd_y

    @property
    def m1(self) -> float:
        return math.log(self.b) + (1 - self.ell) * self.moments.mu_y + self.moments.mu_e

    @property
    def m2(self) -> float:
        return math.log(self.c) - self.ell * self.moments.mu_y

    @property
    def rho12(self) -> float:
        m, s1 = self.moments, self.sigma1
        if s1 == 0.0:
            return 0.0
        return (-(1 - self.ell) * m.sd_y - m.sd_e * m.rho_ye) / s1


def terminal_expectation(query: TerminalQuery) -> float:
    m = query.moments
    return _kernels.terminal_scalar(query.a, query.b, query.c, query.ell, m.mu_y, m.var_y,
                                    m.mu_e, m.var_e, m.rho_ye)


def build_terminal_query(contract: ContractParams, w: float, a: float, r: float, pi: float,
                         m: StepMoments, ell: float = 1.0) -> TerminalQuery:
    """Parameters of the last-step expectation given the state at t_{N-1}."""
    if pi < 0 or pi > a + 1e-12:
        raise ValueError("inadmissible withdrawal: need 0 <= pi <= a")
    g_last = guaranteed_withdrawal(contract, contract.n_dates)
    coef_a = math.exp(-ell * m.loading * r)
    coef_b = max(w - pi, 0.0) * math.exp(-contract.fee * m.dt) * math.exp(m.loading * r)
    coef_c = float(cashflow(max(a - pi, 0.0), g_last, contract.penalty))
    return TerminalQuery(a=coef_a, b=coef_b, c=coef_c, ell=ell, moments=m)
