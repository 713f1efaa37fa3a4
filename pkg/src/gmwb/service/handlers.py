"""Transport-independent request handlers."""
from __future__ import annotations

from ..config import ExperimentConfig
from ..estimators import fair_fee_solve, multi_run
from ..verify import run_suite
from .schemas import (CheckResult, FeeRequest, FeeResponse, PriceResponse, ResultRow, RunDetail,
                      VerifyResponse)


def price(cfg: ExperimentConfig) -> PriceResponse:
    model, contract, solver = cfg.model_params(), cfg.contract_params(), cfg.solver_config()
    est = cfg.estimator
    res = multi_run(model, contract, solver, est.runs, est.seed, lower_mode=est.lower_mode,
                    fresh_paths=est.fresh_paths)
    fp = res.lower.fingerprint
    rows = [ResultRow(fingerprint=fp["hash"], preset=cfg.preset, algorithm=solver.algorithm,
                      regressor=solver.regressor, basis=fp["basis"], rate_mode=model.rate_mode,
                      sigma_s=model.sigma_s, fee=contract.fee, n_paths=solver.n_paths,
                      runs=e.runs, seed=est.seed, kind=e.kind, mode=e.mode, mean=e.mean,
                      se=e.se, std=e.std, runtime_s=round(res.seconds, 3))
            for e in res.estimates()]
    runs = [RunDetail(run=r.run, lower=r.lower, upper=r.upper, seconds=round(r.seconds, 3),
                      ridge_dates=r.ridge_dates) for r in res.records]
    return PriceResponse(rows=rows, runs=runs, config=cfg, fingerprint=fp)


def fair_fee(req: FeeRequest) -> FeeResponse:
    cfg = req.config
    res = fair_fee_solve(cfg.model_params(), cfg.contract_params(), cfg.solver_config(),
                         seed=cfg.estimator.seed, tolerance=req.tolerance, bracket=req.bracket,
                         max_iter=req.max_iter, lower_mode=cfg.estimator.lower_mode)
    return FeeResponse(alpha_star=res.alpha_star, residual=res.residual,
                       iterations=res.iterations, bracket=res.bracket, price=res.price,
                       history=res.history)


def verify(suite: str, echo=None) -> VerifyResponse:
    checks = run_suite(suite, echo=echo)
    return VerifyResponse(suite=suite, passed=all(c.passed for c in checks),
                          checks=[CheckResult(name=c.name, passed=c.passed, measured=c.measured,
                                              target=c.target, seconds=round(c.seconds, 3))
                                  for c in checks])
