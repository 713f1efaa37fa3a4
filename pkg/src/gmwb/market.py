"""Joint equity / short-rate dynamics with an exact discrete-time scheme.

Under the risk-neutral measure::

    dS/S = r dt + sigma_s (rho dB1 + sqrt(1 - rho^2) dB2)
    dr   = kappa (theta - r) dt + sigma_r dB1

Over a step of length ``dt`` starting from ``(S, r)`` three Gaussians drive the
transition::

    R = r(t+dt) - e^{-kappa dt} r
    Y = int r du - loading * r,      loading = (1 - e^{-kappa dt}) / kappa
    E = -sigma_s^2 dt / 2 + sigma_s * (rho dB1 + sqrt(1-rho^2) dB2 increment)

so that ``S' = S exp(loading r + Y + E)``, ``r' = e^{-kappa dt} r + R`` and the
exact step discount is ``exp(-(loading r + Y))``.  In constant-rate mode
``loading = dt`` and ``R = Y = 0``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

CONSTANT = "constant"
VASICEK = "vasicek"

DEFAULT_BLOCK_SIZE = 1 << 15


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    s0: float = 1.0
    r0: float = 0.05
    kappa: float = 0.0
    theta: float = 0.05
    sigma_r: float = 0.0
    sigma_s: float = 0.2
    rho: float = 0.0
    rate_mode: str = CONSTANT

    def __post_init__(self):
        if self.rate_mode not in (CONSTANT, VASICEK):
            raise ModelError(f"rate_mode must be 'constant' or 'vasicek', got {self.rate_mode!r}")
        if not self.s0 > 0:
            raise ModelError("s0 must be positive")
        if self.sigma_s < 0:
            raise ModelError("sigma_s must be nonnegative")
        if self.sigma_r < 0:
            raise ModelError("sigma_r must be nonnegative")
        if abs(self.rho) > 1:
            raise ModelError("rho must lie in [-1, 1]")
        if self.rate_mode == VASICEK and not self.kappa > 0:
            raise ModelError("kappa must be positive in vasicek mode")

    @property
    def is_constant(self) -> bool:
        return self.rate_mode == CONSTANT

    @classmethod
    def constant(cls, r: float, sigma_s: float, s0: float = 1.0) -> "ModelParams":
        return cls(s0=s0, r0=r, theta=r, sigma_s=sigma_s, rate_mode=CONSTANT)


@dataclass(frozen=True)
class StepMoments:
    """Closed-form one-step moments of (R, Y, E) and their correlation factor."""

    dt: float
    decay: float  # e^{-kappa dt}; 1 in constant mode
    loading: float  # (1 - e^{-kappa dt}) / kappa; dt in constant mode
    mu_r: float
    var_r: float
    mu_y: float
    var_y: float
    mu_e: float
    var_e: float
    rho_ry: float
    rho_re: float
    rho_ye: float
    chol: np.ndarray = field(repr=False, compare=False)

    @property
    def sd_r(self) -> float:
        return math.sqrt(self.var_r)

    @property
    def sd_y(self) -> float:
        return math.sqrt(self.var_y)

    @property
    def sd_e(self) -> float:
        return math.sqrt(self.var_e)

    def corr_matrix(self) -> np.ndarray:
        return np.array([
            [1.0, self.rho_ry, self.rho_re],
            [self.rho_ry, 1.0, self.rho_ye],
            [self.rho_re, self.rho_ye, 1.0],
        ])

    def rho_rs(self) -> float:
        """Correlation of N_R with the merged asset shock of the bivariate scheme."""
        sd_s = self.merged_asset_sd()
        if sd_s == 0.0:
            return 0.0
        return (self.sd_y * self.rho_ry + self.sd_e * self.rho_re) / sd_s

    def merged_asset_sd(self) -> float:
        v = self.var_y + self.var_e + 2.0 * self.sd_y * self.sd_e * self.rho_ye
        return math.sqrt(max(v, 0.0))


def _safe_corr(cov: float, sa: float, sb: float) -> float:
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return cov / (sa * sb)


def _chol3(c: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    # semidefinite-tolerant Cholesky; singular pivots produce zero columns
    L = np.zeros((3, 3))
    for j in range(3):
        d = c[j, j] - np.dot(L[j, :j], L[j, :j])
        if d < -tol:
            raise ModelError("correlation matrix of (N_R, N_Y, N_E) is not positive semi-definite")
        d = math.sqrt(max(d, 0.0))
        L[j, j] = d
        for i in range(j + 1, 3):
            v = c[i, j] - np.dot(L[i, :j], L[j, :j])
            L[i, j] = v / d if d > 0.0 else 0.0
    return L


def step_moments(params: ModelParams, dt: float) -> StepMoments:
    if not dt > 0:
        raise ModelError(f"step length must be positive, got {dt}")
    sig_s = params.sigma_s
    mu_e = -0.5 * sig_s * sig_s * dt
    var_e = sig_s * sig_s * dt
    if params.is_constant:
        return StepMoments(dt=dt, decay=1.0, loading=dt, mu_r=0.0, var_r=0.0, mu_y=0.0,
                           var_y=0.0, mu_e=mu_e, var_e=var_e, rho_ry=0.0, rho_re=0.0,
                           rho_ye=0.0, chol=np.eye(3))

    k, th, sr, rho = params.kappa, params.theta, params.sigma_r, params.rho
    decay = math.exp(-k * dt)
    one_m = -math.expm1(-k * dt)  # 1 - e^{-k dt}
    one_m2 = -math.expm1(-2.0 * k * dt)
    loading = one_m / k

    mu_r = th * one_m
    var_r = sr * sr / (2.0 * k) * one_m2
    mu_y = th * (dt - loading)
    var_y = sr * sr / (k * k) * (dt - 2.0 * loading + one_m2 / (2.0 * k))
    var_y = max(var_y, 0.0)

    cov_ry = sr * sr * one_m * one_m / (2.0 * k * k)
    cov_re = rho * sr * sig_s * one_m / k
    cov_ye = rho * sr * sig_s * (dt - loading) / k
    sd_r, sd_y, sd_e = math.sqrt(var_r), math.sqrt(var_y), math.sqrt(var_e)
    rho_ry = _safe_corr(cov_ry, sd_r, sd_y)
    rho_re = _safe_corr(cov_re, sd_r, sd_e)
    rho_ye = _safe_corr(cov_ye, sd_y, sd_e)
    corr = np.array([[1.0, rho_ry, rho_re], [rho_ry, 1.0, rho_ye], [rho_re, rho_ye, 1.0]])
    return StepMoments(dt=dt, decay=decay, loading=loading, mu_r=mu_r, var_r=var_r, mu_y=mu_y,
                       var_y=var_y, mu_e=mu_e, var_e=var_e, rho_ry=rho_ry, rho_re=rho_re,
                       rho_ye=rho_ye, chol=_chol3(corr))


def correlated_normals(m: StepMoments, z: np.ndarray) -> np.ndarray:
    """Map iid standard normals ``z[..., 3]`` to correlated (N_R, N_Y, N_E)."""
    return z @ m.chol.T


def simulate_step(s, r, m: StepMoments, z):
    """Advance ``(s, r)`` by one exact step.

    ``z`` holds iid standard normals with a trailing axis of length 3.  Returns
    ``(s_next, r_next, step_discount)``; all arrays broadcast like ``s``.
    """
    n = correlated_normals(m, np.asarray(z, dtype=float))
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    y = m.mu_y + m.sd_y * n[..., 1]
    e = m.mu_e + m.sd_e * n[..., 2]
    integrated = m.loading * r + y
    s_next = s * np.exp(integrated + e)
    r_next = m.decay * r + (m.mu_r + m.sd_r * n[..., 0])
    return s_next, r_next, np.exp(-integrated)


@dataclass
class MarketPaths:
    """Simulated market states on a date grid.

    ``s``, ``r`` have shape ``(n_paths, n_dates)``; ``discount[:, j]`` is the
    exact discount factor over ``(t_{j-1}, t_j]`` with ``discount[:, 0] = 1``.
    """

    dates: np.ndarray
    s: np.ndarray
    r: np.ndarray
    discount: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    def asset_ratio(self, j: int) -> np.ndarray:
        """S(t_{j+1}) / S(t_j)."""
        return self.s[:, j + 1] / self.s[:, j]

    def cumulative_discount(self) -> np.ndarray:
        return np.cumprod(self.discount, axis=1)


def block_seeds(seed, n_paths: int, block_size: int, stream: int = 0) -> list:
    """Per-block seed sequences; ``seed`` is an int or a sequence of ints."""
    n_blocks = -(-n_paths // block_size)
    entropy = int(seed) if np.isscalar(seed) else [int(x) for x in seed]
    return np.random.SeedSequence(entropy, spawn_key=(stream,)).spawn(n_blocks)


def simulate_paths(params: ModelParams, dates, n_paths: int, seed, *,
                   block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1) -> MarketPaths:
    dates = np.asarray(dates, dtype=float)
    if dates.ndim != 1 or dates.size < 2:
        raise ModelError("time grid needs at least two dates")
    if dates[0] != 0.0 or np.any(np.diff(dates) <= 0):
        raise ModelError("time grid must start at 0 and be strictly increasing")
    if n_paths < 1:
        raise ModelError("n_paths must be at least 1")

    n_steps = dates.size - 1
    moments = [step_moments(params, dt) for dt in np.diff(dates)]
    s = np.empty((n_paths, n_steps + 1))
    r = np.empty((n_paths, n_steps + 1))
    disc = np.empty((n_paths, n_steps + 1))
    s[:, 0] = params.s0
    r[:, 0] = params.r0
    disc[:, 0] = 1.0

    seeds = block_seeds(seed, n_paths, block_size, stream=0)

    def run_block(b):
        lo, hi = b * block_size, min((b + 1) * block_size, n_paths)
        rng = np.random.Generator(np.random.PCG64(seeds[b]))
        z = rng.standard_normal((n_steps, hi - lo, 3))
        for j, m in enumerate(moments):
            s[lo:hi, j + 1], r[lo:hi, j + 1], disc[lo:hi, j + 1] = simulate_step(
                s[lo:hi, j], r[lo:hi, j], m, z[j])

    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run_block, range(len(seeds))))
    else:
        for b in range(len(seeds)):
            run_block(b)
    return MarketPaths(dates=dates, s=s, r=r, discount=disc)


def vasicek_bond_price(params: ModelParams, t: float) -> float:
    """Zero-coupon bond price P(0, t); used as an independent discounting check."""
    if params.is_constant:
        return math.exp(-params.r0 * t)
    k, th, sr = params.kappa, params.theta, params.sigma_r
    b = -math.expm1(-k * t) / k
    ln_a = (th - sr * sr / (2 * k * k)) * (b - t) - sr * sr * b * b / (4 * k)
    return math.exp(ln_a - b * params.r0)
