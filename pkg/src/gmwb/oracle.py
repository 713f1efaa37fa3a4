"""Independent pricers used to check the LSMC solvers.

``static_price`` is plain Monte Carlo under contractual withdrawals;
``dp_quadrature_price`` solves the constant-rate Bellman recursion on a
(W, A) grid with Gauss-Hermite expectations; ``mc_conditional_moment``
brute-forces the one-step discounted moments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .contract import ContractParams, apply_withdrawal, cashflow, grow_wealth, terminal_payoff
from .estimators import LOWER, FRESH, PriceEstimate
from .market import DEFAULT_BLOCK_SIZE, ModelParams, simulate_paths, simulate_step, step_moments


class OracleError(ValueError):
    pass


def static_price(model: ModelParams, contract: ContractParams, n_paths: int, seed, *,
                 block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1) -> PriceEstimate:
    """Withdraw exactly G_n at every decision date; plain MC of the discounted payoff."""
    mk = simulate_paths(model, contract.time_grid, n_paths, seed, block_size=block_size,
                        threads=threads)
    g = contract.guaranteed_amounts()
    dts = contract.step_lengths
    w = np.full(n_paths, contract.w0)
    a = np.full(n_paths, contract.w0)
    value = np.zeros(n_paths)
    cum = np.ones(n_paths)
    for n in range(contract.n_dates):
        pi = np.minimum(g[n], a) if n >= 1 else np.zeros(n_paths)
        value += cum * cashflow(pi, g[n], contract.penalty)
        wp, a = apply_withdrawal(w, a, pi)
        w = grow_wealth(wp, mk.asset_ratio(n), contract.fee, dts[n])
        cum *= mk.discount[:, n + 1]
    value += cum * terminal_payoff(contract, w, a)
    se = float(value.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else None
    return PriceEstimate(LOWER, [value.mean()], {"oracle": "static", "n_paths": n_paths,
                                                 "seed": seed}, mode=FRESH, mc_se=se)


@dataclass(frozen=True)
class DPGrid:
    n_wealth: int = 200
    n_guarantee: int = 50  # intervals; nodes = n_guarantee + 1 including 0 and w0
    n_quadrature: int = 16
    w_min_frac: float = 1e-3  # smallest positive wealth node, as a fraction of w0
    w_max_mult: float | None = None  # None: w0 * exp((r + 4 sigma) T) with a small margin

    def scaled(self, factor: int) -> "DPGrid":
        return DPGrid(self.n_wealth * factor, self.n_guarantee * factor,
                      self.n_quadrature * factor, self.w_min_frac, self.w_max_mult)


def _interp_columns(x, table, extrapolate_slope=True):
    """PCHIP in the first axis for each column, linear beyond the last node."""
    interps = [PchipInterpolator(x, table[:, k]) for k in range(table.shape[1])]
    slopes = (table[-1] - table[-2]) / (x[-1] - x[-2])

    def evaluate(k, pts):
        pts = np.asarray(pts, dtype=float)
        out = interps[k](np.minimum(pts, x[-1]))
        above = pts > x[-1]
        if extrapolate_slope and np.any(above):
            out = np.where(above, table[-1, k] + slopes[k] * (pts - x[-1]), out)
        return out

    return evaluate


def dp_quadrature_price(model: ModelParams, contract: ContractParams,
                        grid: DPGrid | None = None) -> float:
    """V_0(w0, w0) from backward induction on a (W, A) grid (constant rate only)."""
    grid = grid or DPGrid()
    if not model.is_constant:
        raise OracleError("the quadrature DP oracle supports the constant-rate model only")
    g_amounts = contract.guaranteed_amounts()
    w0, r, sig = contract.w0, model.r0, model.sigma_s
    a_nodes = np.linspace(0.0, w0, grid.n_guarantee + 1)
    da = a_nodes[1]
    # withdrawals are differences of A nodes, so each G_n must sit on the A grid
    for gn in g_amounts[1:]:
        if abs(gn / da - round(gn / da)) > 1e-9:
            raise OracleError("guarantee grid too coarse: contractual amounts are off-grid")
    need = w0 * math.exp((r + 4.0 * sig) * contract.maturity_years)
    w_max = need * 1.05 if grid.w_max_mult is None else w0 * grid.w_max_mult
    if w_max < need:
        raise OracleError(f"wealth grid stops at {w_max:.4g} < {need:.4g}: state space not "
                          "bracketed")
    w_nodes = np.concatenate([[0.0], np.geomspace(grid.w_min_frac * w0, w_max, grid.n_wealth)])
    gh_x, gh_w = np.polynomial.hermite.hermgauss(grid.n_quadrature)
    z = math.sqrt(2.0) * gh_x
    q_w = gh_w / math.sqrt(math.pi)

    def expectation(values, dt):
        """e^{-r dt} E[V(w' X e^{-alpha dt}, a')] on the post-decision grid."""
        m = step_moments(model, dt)
        log_ratio = m.loading * r + m.mu_y + m.mu_e - contract.fee * dt
        ratio = np.exp(log_ratio + math.sqrt(m.var_e) * z)
        ev = _interp_columns(w_nodes, values)
        pts = np.outer(w_nodes, ratio)
        out = np.empty_like(values)
        for k in range(a_nodes.size):
            out[:, k] = ev(k, pts.ravel()).reshape(pts.shape) @ q_w
        return math.exp(-r * dt) * out

    n_dates = contract.n_dates
    dts = contract.step_lengths
    wg, ag = np.meshgrid(w_nodes, a_nodes, indexing="ij")
    values = terminal_payoff(contract, wg, ag)
    for n in range(n_dates - 1, 0, -1):
        cont = expectation(values, dts[n])
        ev = _interp_columns(w_nodes, cont)
        new = np.full_like(values, -np.inf)
        for k in range(a_nodes.size):
            for kp in range(k + 1):  # post-decision guarantee a_kp <= a_k
                pi = a_nodes[k] - a_nodes[kp]
                cand = cashflow(pi, g_amounts[n], contract.penalty) + \
                    ev(kp, np.maximum(w_nodes - pi, 0.0))
                new[:, k] = np.maximum(new[:, k], cand)
        values = new
    cont = expectation(values, dts[0])
    return float(_interp_columns(w_nodes, cont)(a_nodes.size - 1, [w0])[0])


def mc_conditional_moment(model: ModelParams, s: float, r: float, ell: float, p: int, q: int,
                          dt: float, n_paths: int, seed) -> tuple:
    """Brute-force mean and SE of exp(-ell int r) S(t+dt)^p r(t+dt)^q over one exact step."""
    m = step_moments(model, dt)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    z = rng.standard_normal((n_paths, 3))
    s1, r1, disc = simulate_step(np.full(n_paths, float(s)), np.full(n_paths, float(r)), m, z)
    x = disc ** ell * s1 ** p * r1 ** q
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n_paths))
