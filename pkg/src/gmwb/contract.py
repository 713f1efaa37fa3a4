"""GMWB contract mechanics: accounts, penalised cashflows and terminal payoff.

All account functions are vectorised: scalar or array arguments broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class ContractParams:
    w0: float = 1.0
    maturity_years: float = 10.0
    dates: tuple = field(default=None)
    penalty: float = 0.1
    fee: float = 0.0135

    def __post_init__(self):
        if not self.w0 > 0:
            raise ContractError("premium w0 must be positive")
        if not self.maturity_years > 0:
            raise ContractError("maturity must be positive")
        if self.dates is None:
            n = int(round(self.maturity_years))
            object.__setattr__(self, "dates", tuple(float(k) for k in range(1, n + 1)))
        d = np.asarray(self.dates, dtype=float)
        object.__setattr__(self, "dates", tuple(float(x) for x in d))
        if d.size < 1 or d[0] <= 0 or np.any(np.diff(d) <= 0):
            raise ContractError("withdrawal dates must be positive and strictly increasing")
        if not np.isclose(d[-1], self.maturity_years):
            raise ContractError("last withdrawal date must equal the maturity")
        if not 0.0 <= self.penalty <= 1.0:
            raise ContractError("penalty must lie in [0, 1]")
        if self.fee < 0:
            raise ContractError("fee must be nonnegative")

    @property
    def n_dates(self) -> int:
        """N, the number of withdrawal dates t_1..t_N."""
        return len(self.dates)

    @property
    def g(self) -> float:
        return 1.0 / self.maturity_years

    @property
    def time_grid(self) -> np.ndarray:
        """t_0 = 0 followed by the withdrawal dates."""
        return np.concatenate([[0.0], self.dates])

    @property
    def step_lengths(self) -> np.ndarray:
        return np.diff(self.time_grid)

    def guaranteed_amounts(self) -> np.ndarray:
        """G_n for n = 0..N (G_0 = 0 is a placeholder; no decision at t_0)."""
        return np.concatenate([[0.0], self.w0 * self.step_lengths / self.maturity_years])

    @classmethod
    def every(cls, years: float, frequency: int = 1, **kw) -> "ContractParams":
        n = int(round(years * frequency))
        return cls(maturity_years=years, dates=tuple((k + 1) / frequency for k in range(n)), **kw)


def guaranteed_withdrawal(params: ContractParams, n: int) -> float:
    if not 1 <= n <= params.n_dates:
        raise ContractError(f"date index {n} outside 1..{params.n_dates}")
    grid = params.time_grid
    return params.w0 * (grid[n] - grid[n - 1]) / params.maturity_years


def cashflow(pi, g, penalty):
    """Amount received for a withdrawal ``pi`` when the contractual amount is ``g``."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0):
        raise ContractError("withdrawal must be nonnegative")
    return np.where(pi <= g, pi, g + (1.0 - penalty) * (pi - g))


def apply_withdrawal(w, a, pi, *, atol: float = 1e-12):
    """Post-decision accounts ``(max(w - pi, 0), a - pi)``."""
    w, a, pi = (np.asarray(x, dtype=float) for x in (w, a, pi))
    if np.any(pi < 0) or np.any(pi > a + atol):
        raise ContractError("inadmissible withdrawal: need 0 <= pi <= a")
    return np.maximum(w - pi, 0.0), np.maximum(a - pi, 0.0)


def grow_wealth(w_post, asset_ratio, fee, dt):
    return np.asarray(w_post, dtype=float) * asset_ratio * np.exp(-fee * dt)


def terminal_payoff(params: ContractParams, w, a):
    g_n = guaranteed_withdrawal(params, params.n_dates)
    return np.maximum(w, cashflow(a, g_n, params.penalty))
