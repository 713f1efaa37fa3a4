"""Least-squares Monte Carlo solvers for the GMWB withdrawal-control problem.

Forward simulation draws randomised withdrawals so the regressions see the
whole (state, control) domain; the backward pass then fits continuation values
date by date and extracts optimal withdrawals by grid search.  Four backward
variants are provided: realised value or regression surface, each in regress
now or regress later form.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .closed_form import conditional_moment
from .contract import ContractParams, apply_withdrawal, cashflow, grow_wealth, terminal_payoff
from .market import DEFAULT_BLOCK_SIZE, MarketPaths, ModelParams, block_seeds, simulate_paths, \
    step_moments
from .regression import (MLPModel, OLSModel, RegressionError, TrainConfig, get_basis, mlp_fit,
                         model_from_dict, ols_fit, predict)

log = logging.getLogger(__name__)

ALGORITHMS = ("realized_now", "surface_now", "realized_later", "surface_later")
REGRESSORS = ("ols", "mlp")


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    algorithm: str = "realized_now"
    regressor: str = "ols"
    basis: str | None = None  # None: default for the rate mode and scheme
    grid_size: int = 1000
    mixture: tuple = (0.25, 0.25, 0.5)  # P(no withdrawal), P(contractual), P(uniform on [0, a])
    n_paths: int = 10_000
    seed: int = 0
    admissible: str = "full"  # "full" = [0, a]; "static" = the singleton {G_n}
    train: TrainConfig = field(default_factory=TrainConfig)
    exact_terminal: bool = True
    randomize_start: bool = True  # also draw a training control at t_0 (full set only)
    block_size: int = DEFAULT_BLOCK_SIZE
    threads: int = 1
    mlp_chunk: int = 2048

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise SolverError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.regressor not in REGRESSORS:
            raise SolverError(f"regressor must be one of {REGRESSORS}, got {self.regressor!r}")
        if self.grid_size < 2:
            raise SolverError("control grid needs at least 2 points")
        w = np.asarray(self.mixture, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise SolverError("mixture weights must be three nonnegative numbers summing to 1")
        if self.admissible not in ("full", "static"):
            raise SolverError("admissible must be 'full' or 'static'")
        if self.n_paths < 1:
            raise SolverError("n_paths must be positive")
        if self.scheme == "later" and self.regressor != "ols":
            raise SolverError("regress-later needs closed-form expectations of the regressor; "
                              "only polynomial OLS provides them (use a *_now algorithm for mlp)")

    @property
    def scheme(self) -> str:
        return self.algorithm.split("_")[1]

    @property
    def realized(self) -> bool:
        return self.algorithm.startswith("realized")

    def basis_name(self, model: ModelParams) -> str:
        if self.basis:
            return self.basis
        if self.scheme == "later":
            return "later_cubic" if model.is_constant else "later_cubic_rate"
        return "cubic_pruned" if model.is_constant else "quadratic_rate"


def derive_seed(seed, *keys) -> list:
    base = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    return base + [int(k) for k in keys]


# ---------------------------------------------------------------------------
# forward simulation

@dataclass
class PathSet:
    """Training trajectories under randomised withdrawals.

    ``w``/``a`` are pre-decision accounts of shape ``(M, N+1)``; ``pi`` holds the
    randomised controls.  The entry at t_N is zero; the one at t_0 is a training
    draw only (the contract has no withdrawal there) and is zero when
    ``randomize_start`` is off.
    """

    market: MarketPaths
    w: np.ndarray
    a: np.ndarray
    pi: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.w.shape[0]


def _control_uniforms(seed, n_paths, n_cols, block_size):
    out = np.empty((n_paths, n_cols, 2))
    for b, ss in enumerate(block_seeds(seed, n_paths, block_size, stream=1)):
        lo, hi = b * block_size, min((b + 1) * block_size, n_paths)
        out[lo:hi] = np.random.Generator(np.random.PCG64(ss)).random((hi - lo, n_cols, 2))
    return out


def randomized_control(u_pick, u_amount, a, g, mixture):
    """Draw from {0 w.p. p0; G w.p. p1; Uniform(0, a) w.p. p2}, clipped to [0, a]."""
    p0, p1, _ = mixture
    pi = np.where(u_pick < p0, 0.0, np.where(u_pick < p0 + p1, g, u_amount * a))
    return np.clip(pi, 0.0, a)


def forward_simulate(model: ModelParams, contract: ContractParams, cfg: SolverConfig,
                     seed=None, market: MarketPaths | None = None) -> PathSet:
    seed = cfg.seed if seed is None else seed
    n_dates = contract.n_dates
    if market is None:
        market = simulate_paths(model, contract.time_grid, cfg.n_paths, seed,
                                block_size=cfg.block_size, threads=cfg.threads)
    m = market.n_paths
    u = _control_uniforms(seed, m, n_dates + 1, cfg.block_size)
    g = contract.guaranteed_amounts()
    dts = contract.step_lengths
    w = np.empty((m, n_dates + 1))
    a = np.empty((m, n_dates + 1))
    pi = np.zeros((m, n_dates + 1))
    w[:, 0] = contract.w0
    a[:, 0] = contract.w0
    for n in range(n_dates):
        if n >= 1:
            if cfg.admissible == "static":
                pi[:, n] = np.minimum(g[n], a[:, n])
            else:
                pi[:, n] = randomized_control(u[:, n, 0], u[:, n, 1], a[:, n], g[n],
                                              cfg.mixture)
        elif cfg.randomize_start and cfg.admissible == "full" and n_dates > 1:
            # no withdrawal is taken at t_0; the draw only widens the t_1 training states
            pi[:, 0] = randomized_control(u[:, 0, 0], u[:, 0, 1], a[:, 0], g[1], cfg.mixture)
        wp, ap = apply_withdrawal(w[:, n], a[:, n], pi[:, n])
        w[:, n + 1] = grow_wealth(wp, market.asset_ratio(n), contract.fee, dts[n])
        a[:, n + 1] = ap
    return PathSet(market=market, w=w, a=a, pi=pi)


# ---------------------------------------------------------------------------
# policies

def _exps4(basis) -> np.ndarray:
    """Exponents re-ordered to (w, a, pi, r) columns for the compiled kernels."""
    exps = basis.exponent_array()
    out = np.zeros((exps.shape[0], 4), dtype=np.int64)
    for v, name in enumerate(basis.variables):
        out[:, ("w", "a", "pi", "r").index(name)] = exps[:, v]
    return out


def _stack(basis_vars, **cols) -> np.ndarray:
    return np.column_stack([cols[v] for v in basis_vars])


@dataclass
class Policy:
    """Fitted continuation values plus the grid argmax rule.

    For the regress-now scheme ``models[n]`` approximates the discounted
    continuation value at t_n as a function of (pre-decision state, control) for
    OLS, or of the post-decision state for the network.  For regress-later
    ``models[n]`` is the fit of V_{n+1} on end-of-step covariates, integrated in
    closed form; the last step may use the exact terminal expectation.
    """

    contract: ContractParams
    model: ModelParams
    scheme: str
    regressor: str
    grid_size: int = 1000
    admissible: str = "full"
    exact_terminal: bool = True
    models: dict = field(default_factory=dict)
    mlp_chunk: int = 2048

    def __post_init__(self):
        self._g = self.contract.guaranteed_amounts()
        self._dts = self.contract.step_lengths
        self._moments = {}

    def moments(self, n):
        if n not in self._moments:
            self._moments[n] = step_moments(self.model, self._dts[n])
        return self._moments[n]

    @property
    def decision_dates(self) -> range:
        return range(1, self.contract.n_dates)

    def _uses_exact_terminal(self, n) -> bool:
        return self.scheme == "later" and self.exact_terminal and n == self.contract.n_dates - 1

    def _check(self, n):
        if not self._uses_exact_terminal(n) and n not in self.models:
            raise SolverError(f"policy has no fitted regressor for date {n}")

    # continuation value at given controls (vectorised, used for static sets and t_0)
    def continuation(self, n, w, a, r, pi) -> np.ndarray:
        self._check(n)
        w, a, r, pi = np.broadcast_arrays(*(np.atleast_1d(np.asarray(x, dtype=float))
                                            for x in (w, a, r, pi)))
        if self.scheme == "now":
            mdl = self.models[n]
            if isinstance(mdl, MLPModel):
                return predict(mdl, self._post_cov(mdl, w, a, r, pi))
            return predict(mdl, _stack(mdl.basis.variables, w=w, a=a, pi=pi, r=r))
        pw = np.maximum(w - pi, 0.0)
        pa = np.maximum(a - pi, 0.0)
        if self._uses_exact_terminal(n):
            m = self.moments(n)
            growth = np.exp(-self.contract.fee * m.dt) * np.exp(m.loading * r)
            g_last = self._g[-1]
            c = cashflow(pa, g_last, self.contract.penalty)
            return np.vectorize(_kernels.terminal_scalar)(
                np.exp(-m.loading * r), pw * growth, c, 1.0, m.mu_y, m.var_y, m.mu_e, m.var_e,
                m.rho_ye)
        h = self._later_coefficients(n, r)
        tot = np.zeros_like(pw)
        for i in range(h.shape[1]):
            for j in range(h.shape[2]):
                tot += h[:, i, j] * pw ** i * pa ** j
        return tot

    def _post_cov(self, mdl, w, a, r, pi):
        cols = [np.maximum(w - pi, 0.0), np.maximum(a - pi, 0.0)]
        if mdl.dim == 3:
            cols.append(r)
        return np.column_stack(cols)

    def _later_coefficients(self, n, r) -> np.ndarray:
        """h[p, i, j] so that Phi_n = sum_ij h_ij max(w - pi, 0)^i (a - pi)^j."""
        mdl = self.models[n]
        exps = _exps4(mdl.basis)
        m = self.moments(n)
        fee_decay = np.exp(-self.contract.fee * m.dt)
        di, dj = exps[:, 0].max() + 1, exps[:, 1].max() + 1
        r = np.asarray(r, dtype=float)
        h = np.zeros((r.shape[0], di, dj))
        cache = {}
        for t, (i, j, _, q) in enumerate(exps):
            if (i, q) not in cache:
                cache[(i, q)] = conditional_moment(1.0, int(i), int(q), 1.0, r, m)
            h[:, i, j] += mdl.coef[t] * fee_decay ** i * cache[(i, q)]
        return h

    def optimize(self, n, w, a, r):
        """Optimal withdrawal and the maximised R_n + Phi_n at every path."""
        self._check(n)
        w = np.ascontiguousarray(w, dtype=float)
        a = np.ascontiguousarray(a, dtype=float)
        r = np.ascontiguousarray(np.broadcast_to(r, w.shape), dtype=float)
        g, pen = self._g[n], self.contract.penalty
        if self.admissible == "static":
            pi = np.minimum(g, a)
            return pi, cashflow(pi, g, pen) + self.continuation(n, w, a, r, pi)
        if self._uses_exact_terminal(n):
            m = self.moments(n)
            return _kernels.argmax_terminal(w, a, r, g, self._g[-1], pen,
                                            np.exp(-self.contract.fee * m.dt), m.loading, 1.0,
                                            m.mu_y, m.var_y, m.mu_e, m.var_e, m.rho_ye,
                                            self.grid_size)
        mdl = self.models[n]
        if self.scheme == "later":
            h = self._later_coefficients(n, r)
            return _kernels.argmax_poly_later(w, a, g, pen, h, self.grid_size)
        if isinstance(mdl, OLSModel):
            return _kernels.argmax_poly_now(w, a, r, g, pen, mdl.coef, _exps4(mdl.basis),
                                            self.grid_size)
        return self._argmax_mlp(n, mdl, w, a, r)

    def _argmax_mlp(self, n, mdl, w, a, r):
        g, pen = self._g[n], self.contract.penalty
        frac = np.linspace(0.0, 1.0, self.grid_size)
        pi_out = np.empty_like(w)
        v_out = np.empty_like(w)
        for lo in range(0, w.shape[0], self.mlp_chunk):
            sl = slice(lo, lo + self.mlp_chunk)
            aa = a[sl, None]
            cand = np.concatenate([aa * frac, np.minimum(g, aa)], axis=1)
            cand.sort(axis=1)
            ww = np.broadcast_to(w[sl, None], cand.shape)
            rr = np.broadcast_to(r[sl, None], cand.shape)
            cov = self._post_cov(mdl, ww.ravel(), np.broadcast_to(aa, cand.shape).ravel(),
                                 rr.ravel(), cand.ravel())
            vals = cashflow(cand, g, pen) + predict(mdl, cov).reshape(cand.shape)
            k = np.argmax(vals, axis=1)  # first maximum: smallest withdrawal on ties
            rows = np.arange(cand.shape[0])
            pi_out[sl] = cand[rows, k]
            v_out[sl] = vals[rows, k]
        return pi_out, v_out

    def decide(self, n, w, a, r) -> np.ndarray:
        if n == 0:
            return np.zeros_like(np.asarray(w, dtype=float))
        return self.optimize(n, w, a, r)[0]

    # serialisation
    def to_dict(self) -> dict:
        from dataclasses import asdict
        return {"scheme": self.scheme, "regressor": self.regressor, "grid_size": self.grid_size,
                "admissible": self.admissible, "exact_terminal": self.exact_terminal,
                "contract": asdict(self.contract), "model": asdict(self.model),
                "models": {str(n): mdl.to_dict() for n, mdl in self.models.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        c = dict(d["contract"])
        c["dates"] = tuple(c["dates"])
        return cls(contract=ContractParams(**c), model=ModelParams(**d["model"]),
                   scheme=d["scheme"], regressor=d["regressor"], grid_size=d["grid_size"],
                   admissible=d["admissible"], exact_terminal=d["exact_terminal"],
                   models={int(n): model_from_dict(m) for n, m in d["models"].items()})


def optimal_control(policy: Policy, n: int, w, a, r=None):
    """(pi*, R_n + Phi_n at pi*) on the uniform grid over [0, a] augmented with G_n."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    r = policy.model.r0 if r is None else r
    return policy.optimize(n, w, np.atleast_1d(np.asarray(a, dtype=float)),
                           np.broadcast_to(np.asarray(r, dtype=float), w.shape))


def rollout(policy: Policy, market: MarketPaths, w, a, start: int, controls: bool = False):
    """Discounted value at t_start of following ``policy`` from ``(w, a)`` to maturity.

    Includes the cashflow at ``start`` (none at t_0).  With ``controls=True`` the
    applied withdrawals are returned as well.
    """
    c = policy.contract
    n_dates = c.n_dates
    g = policy._g
    dts = policy._dts
    w = np.array(w, dtype=float)
    a = np.array(a, dtype=float)
    value = np.zeros_like(w)
    cum = np.ones_like(w)
    taken = np.zeros((w.shape[0], n_dates + 1))
    for j in range(start, n_dates):
        pi = policy.decide(j, w, a, market.r[:, j])
        taken[:, j] = pi
        value += cum * cashflow(pi, g[j], c.penalty)
        wp, a = apply_withdrawal(w, a, pi)
        w = grow_wealth(wp, market.asset_ratio(j), c.fee, dts[j])
        cum *= market.discount[:, j + 1]
    value += cum * terminal_payoff(c, w, a)
    return (value, taken) if controls else value


# ---------------------------------------------------------------------------
# backward solvers

@dataclass
class SolveResult:
    policy: Policy
    algorithm: str
    v0_paths: np.ndarray
    kind: str  # "lower_in_sample" for realised value, "upper" for regression surface
    ridge_dates: list
    seconds: float
    paths: PathSet = field(repr=False, default=None)

    @property
    def estimate(self) -> float:
        return float(np.mean(self.v0_paths))


def _fit(policy: Policy, cfg: SolverConfig, basis_name: str, cov: dict, targets, n, ridge_dates):
    if cfg.regressor == "mlp":
        cols = [cov["pw"], cov["pa"]]
        if not policy.model.is_constant:
            cols.append(cov["r"])
        policy.models[n] = mlp_fit(np.column_stack(cols), targets, cfg.train)
        return
    basis = get_basis(basis_name)
    try:
        mdl = ols_fit(basis.design(_stack(basis.variables, **cov)), targets, basis)
    except RegressionError as exc:
        raise SolverError(f"regression failed at date {n}: {exc}") from exc
    if mdl.ridge is not None:
        ridge_dates.append(n)
    policy.models[n] = mdl


def _now_covariates(paths: PathSet, n):
    w, a, pi = paths.w[:, n], paths.a[:, n], paths.pi[:, n]
    return {"w": w, "a": a, "pi": pi, "r": paths.market.r[:, n],
            "pw": np.maximum(w - pi, 0.0), "pa": np.maximum(a - pi, 0.0)}


def _later_covariates(paths: PathSet, n):
    return {"w": paths.w[:, n + 1], "a": paths.a[:, n + 1], "r": paths.market.r[:, n + 1]}


def solve(model: ModelParams, contract: ContractParams, cfg: SolverConfig,
          paths: PathSet | None = None, seed=None) -> SolveResult:
    """Forward-simulate (unless ``paths`` is given) and run the configured backward solver."""
    t0 = time.perf_counter()
    if paths is None:
        paths = forward_simulate(model, contract, cfg, seed=seed)
    n_dates = contract.n_dates
    policy = Policy(contract=contract, model=model, scheme=cfg.scheme, regressor=cfg.regressor,
                    grid_size=cfg.grid_size, admissible=cfg.admissible,
                    exact_terminal=cfg.exact_terminal, mlp_chunk=cfg.mlp_chunk)
    basis_name = cfg.basis_name(model)
    market = paths.market
    disc = market.discount
    ridge_dates: list = []

    value = terminal_payoff(contract, paths.w[:, n_dates], paths.a[:, n_dates])
    for n in range(n_dates - 1, 0, -1):
        if cfg.scheme == "now":
            _fit(policy, cfg, basis_name, _now_covariates(paths, n), disc[:, n + 1] * value, n,
                 ridge_dates)
        elif not policy._uses_exact_terminal(n):
            _fit(policy, cfg, basis_name, _later_covariates(paths, n), value, n, ridge_dates)
        if cfg.realized:
            value = rollout(policy, market, paths.w[:, n], paths.a[:, n], start=n)
        else:
            value = policy.optimize(n, paths.w[:, n], paths.a[:, n], market.r[:, n])[1]
        log.debug("date %d done, mean value %.6f", n, value.mean())

    if cfg.algorithm == "surface_later":
        # t_0 has no decision: V_0 = E[beta_{0,1} f_1(X_1)] in closed form
        if not policy._uses_exact_terminal(0):
            _fit(policy, cfg, basis_name, _later_covariates(paths, 0), value, 0, ridge_dates)
        v0 = policy.continuation(0, contract.w0, contract.w0, model.r0, 0.0)
        v0_paths = np.full(paths.n_paths, float(np.ravel(v0)[0]))
    elif not np.any(paths.pi[:, 0]):
        v0_paths = disc[:, 1] * value
    elif cfg.realized:
        # training paths left X_0 with a random control; replay from X_0 itself
        v0_paths = policy_value(policy, market)
    else:
        _fit(policy, cfg, basis_name, _now_covariates(paths, 0), disc[:, 1] * value, 0,
             ridge_dates)
        v0 = policy.continuation(0, contract.w0, contract.w0, model.r0, 0.0)
        v0_paths = np.full(paths.n_paths, float(np.ravel(v0)[0]))
    return SolveResult(policy=policy, algorithm=cfg.algorithm, v0_paths=v0_paths,
                       kind="lower_in_sample" if cfg.realized else "upper",
                       ridge_dates=sorted(ridge_dates), seconds=time.perf_counter() - t0,
                       paths=paths)


def solve_realized_value_regress_now(paths: PathSet, model, contract, cfg: SolverConfig):
    return solve(model, contract, _with(cfg, algorithm="realized_now"), paths=paths)


def solve_regression_surface_regress_now(paths: PathSet, model, contract, cfg: SolverConfig):
    return solve(model, contract, _with(cfg, algorithm="surface_now"), paths=paths)


def solve_regress_later(paths: PathSet, model, contract, cfg: SolverConfig, variant="realized"):
    if variant not in ("realized", "surface"):
        raise SolverError("variant must be 'realized' or 'surface'")
    return solve(model, contract, _with(cfg, algorithm=f"{variant}_later"), paths=paths)


def _with(cfg: SolverConfig, **changes) -> SolverConfig:
    from dataclasses import replace
    return replace(cfg, **changes)


def policy_value(policy: Policy, market: MarketPaths) -> np.ndarray:
    """Per-path discounted payoff H_0 of a frozen policy on the given market paths."""
    c = policy.contract
    m = market.n_paths
    return rollout(policy, market, np.full(m, c.w0), np.full(m, c.w0), start=0)
