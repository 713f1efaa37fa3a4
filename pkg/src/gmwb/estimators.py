"""Price estimators, multi-run statistics and the fair-fee root solver."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .contract import ContractParams
from .lsmc import Policy, SolveResult, SolverConfig, derive_seed, forward_simulate, policy_value, \
    solve
from .market import ModelParams, simulate_paths

log = logging.getLogger(__name__)

LOWER, UPPER = "lower", "upper"
IN_SAMPLE, FRESH = "in_sample", "fresh"

# seed-key layout under the user seed: (run, purpose)
_TRAIN, _FRESH = 0, 1


class EstimatorError(RuntimeError):
    pass


class FeeSolveError(EstimatorError):
    pass


@dataclass
class PriceEstimate:
    """Run means of one estimator with the across-run standard error.

    ``se`` is the sample standard deviation of the run means divided by
    sqrt(runs) and is ``None`` for a single run; ``std`` is the sample standard
    deviation itself.  ``mc_se`` is the within-run Monte Carlo error of a
    single run (path standard deviation / sqrt(M)), when available.
    """

    kind: str
    values: np.ndarray
    fingerprint: dict = field(default_factory=dict)
    mode: str = ""
    mc_se: float | None = None

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.values.size < 1:
            raise EstimatorError("an estimate needs at least one run")
        if self.kind not in (LOWER, UPPER):
            raise EstimatorError(f"unknown estimator kind {self.kind!r}")

    @property
    def runs(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float | None:
        return float(self.values.std(ddof=1)) if self.runs > 1 else None

    @property
    def se(self) -> float | None:
        return self.std / np.sqrt(self.runs) if self.runs > 1 else None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mode": self.mode, "runs": self.runs, "mean": self.mean,
                "se": self.se, "std": self.std, "mc_se": self.mc_se,
                "values": self.values.tolist(), "fingerprint": self.fingerprint}


def combined_se(*estimates: PriceEstimate) -> float:
    return float(np.sqrt(sum((e.se or 0.0) ** 2 for e in estimates)))


def fingerprint(model: ModelParams, contract: ContractParams, cfg: SolverConfig, seeds) -> dict:
    d = {"algorithm": cfg.algorithm, "regressor": cfg.regressor, "basis": cfg.basis_name(model),
         "n_paths": cfg.n_paths, "grid_size": cfg.grid_size, "mixture": list(cfg.mixture),
         "admissible": cfg.admissible, "seeds": [list(s) if not np.isscalar(s) else s
                                                 for s in seeds],
         "model": asdict(model), "contract": asdict(contract)}
    if cfg.regressor == "mlp":
        d["train"] = asdict(cfg.train)
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    d["hash"] = hashlib.sha256(blob).hexdigest()[:16]
    return d


def lower_estimate(policy: Policy, n_paths: int, seed, *, block_size: int | None = None,
                   threads: int = 1) -> PriceEstimate:
    """Replay a frozen policy on fresh trajectories from the initial state."""
    kw = {"threads": threads}
    if block_size:
        kw["block_size"] = block_size
    market = simulate_paths(policy.model, policy.contract.time_grid, n_paths, seed, **kw)
    vals = policy_value(policy, market)
    return PriceEstimate(LOWER, [vals.mean()], mode=FRESH,
                         mc_se=float(vals.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else None)


def upper_estimate(result: SolveResult) -> PriceEstimate:
    if result.kind != "upper":
        raise EstimatorError("upper estimates come from a regression-surface solver")
    v = result.v0_paths
    return PriceEstimate(UPPER, [v.mean()], mode=IN_SAMPLE,
                         mc_se=float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else None)


@dataclass
class RunRecord:
    run: int
    lower: float
    upper: float | None
    seconds: float
    ridge_dates: list


@dataclass
class MultiRunResult:
    lower: PriceEstimate
    upper: PriceEstimate | None
    records: list
    seconds: float

    def estimates(self) -> list:
        return [e for e in (self.lower, self.upper) if e is not None]


def single_run(model: ModelParams, contract: ContractParams, cfg: SolverConfig, run: int, seed,
               lower_mode: str = FRESH, fresh_paths: int | None = None) -> RunRecord:
    t0 = time.perf_counter()
    res = solve(model, contract, replace(cfg, seed=derive_seed(seed, run, _TRAIN)))
    upper = res.estimate if res.kind == "upper" else None
    if lower_mode == IN_SAMPLE and res.kind == "lower_in_sample":
        lower = res.estimate
    else:
        lower = lower_estimate(res.policy, fresh_paths or cfg.n_paths,
                               derive_seed(seed, run, _FRESH), block_size=cfg.block_size,
                               threads=cfg.threads).mean
    return RunRecord(run, lower, upper, time.perf_counter() - t0, res.ridge_dates)


def multi_run(model: ModelParams, contract: ContractParams, cfg: SolverConfig, runs: int,
              seed=0, *, lower_mode: str = FRESH, fresh_paths: int | None = None,
              workers: int = 1) -> MultiRunResult:
    """K independent solve + estimate cycles on disjoint seed streams.

    Aggregation is in run order, so results do not depend on ``workers``.
    """
    if runs < 1:
        raise EstimatorError("runs must be >= 1")
    if lower_mode not in (IN_SAMPLE, FRESH):
        raise EstimatorError(f"lower_mode must be {IN_SAMPLE!r} or {FRESH!r}")
    t0 = time.perf_counter()

    def job(k):
        rec = single_run(model, contract, cfg, k, seed, lower_mode, fresh_paths)
        log.info("run %d/%d: lower %.5f upper %s (%.1fs)", k + 1, runs, rec.lower, rec.upper,
                 rec.seconds)
        return rec

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            records = list(ex.map(job, range(runs)))
    else:
        records = [job(k) for k in range(runs)]
    seeds = [derive_seed(seed, k, _TRAIN) for k in range(runs)]
    fp = fingerprint(model, contract, cfg, seeds)
    fp["lower_mode"] = lower_mode
    realized = cfg.realized and lower_mode == IN_SAMPLE
    lower = PriceEstimate(LOWER, [r.lower for r in records], fp,
                          mode=IN_SAMPLE if realized else FRESH)
    upper = None
    if not cfg.realized:
        upper = PriceEstimate(UPPER, [r.upper for r in records], fp, mode=IN_SAMPLE)
    return MultiRunResult(lower, upper, records, time.perf_counter() - t0)


@dataclass
class FeeSolveResult:
    alpha_star: float
    residual: float
    iterations: int
    bracket: tuple
    price: float
    history: list = field(default_factory=list)


def fair_fee_solve(model: ModelParams, contract: ContractParams, cfg: SolverConfig, *,
                   seed=0, tolerance: float = 1e-3, bracket=(0.0, 0.05), max_iter: int = 30,
                   lower_mode: str = IN_SAMPLE) -> FeeSolveResult:
    """Bisection for the fee that prices the contract at par.

    Every evaluation reuses the same market paths and control draws (common
    random numbers), so prices are comparable across fees.
    """
    lo, hi = map(float, bracket)
    if not 0.0 <= lo < hi:
        raise FeeSolveError("fee bracket must satisfy 0 <= lo < hi")
    train_seed = derive_seed(seed, 0, _TRAIN)
    market = simulate_paths(model, contract.time_grid, cfg.n_paths, train_seed,
                            block_size=cfg.block_size, threads=cfg.threads)
    fresh = None
    if lower_mode == FRESH or not cfg.realized:
        fresh = simulate_paths(model, contract.time_grid, cfg.n_paths,
                               derive_seed(seed, 0, _FRESH), block_size=cfg.block_size,
                               threads=cfg.threads)
    history = []

    def price(alpha):
        c = replace(contract, fee=alpha)
        paths = forward_simulate(model, c, cfg, seed=train_seed, market=market)
        res = solve(model, c, cfg, paths=paths)
        if fresh is None:
            v = res.estimate
        else:
            pol = res.policy
            v = float(policy_value(pol, fresh).mean())
        history.append((alpha, v))
        log.info("fee %.6f -> price %.6f", alpha, v)
        return v

    w0 = contract.w0
    p_lo, p_hi = price(lo), price(hi)
    if not p_lo > w0 > p_hi:
        raise FeeSolveError(f"price does not straddle {w0} on [{lo}, {hi}]: "
                            f"V({lo})={p_lo:.6f}, V({hi})={p_hi:.6f}")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        p = price(mid)
        if abs(p - w0) < tolerance:
            return FeeSolveResult(mid, abs(p - w0), it, (float(bracket[0]), float(bracket[1])),
                                  p, history)
        if p > w0:
            lo = mid
        else:
            hi = mid
    raise FeeSolveError(f"tolerance {tolerance} not reached after {max_iter} bisection steps "
                        f"(last bracket [{lo:.6f}, {hi:.6f}])")
