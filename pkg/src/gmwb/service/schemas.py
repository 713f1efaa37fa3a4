"""Request and response bodies shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..config import ExperimentConfig

# exact column order of the CSV results file
CSV_COLUMNS = ("fingerprint", "preset", "algorithm", "regressor", "basis", "rate_mode",
               "sigma_s", "fee", "n_paths", "runs", "seed", "kind", "mode", "mean", "se", "std",
               "runtime_s")


class ResultRow(BaseModel):
    fingerprint: str
    preset: str
    algorithm: str
    regressor: str
    basis: str
    rate_mode: str
    sigma_s: float
    fee: float
    n_paths: int
    runs: int
    seed: int
    kind: str
    mode: str
    mean: float
    se: Optional[float] = None
    std: Optional[float] = None
    runtime_s: float


class RunDetail(BaseModel):
    run: int
    lower: float
    upper: Optional[float] = None
    seconds: float
    ridge_dates: list[int] = []


class PriceResponse(BaseModel):
    rows: list[ResultRow]
    runs: list[RunDetail]
    config: ExperimentConfig
    fingerprint: dict


class FeeRequest(BaseModel):
    config: ExperimentConfig
    tolerance: float = Field(1e-3, gt=0)
    bracket: tuple[float, float] = (0.0, 0.05)
    max_iter: int = Field(30, ge=1)


class FeeResponse(BaseModel):
    alpha_star: float
    residual: float
    iterations: int
    bracket: tuple[float, float]
    price: float
    history: list[tuple[float, float]]


class CheckResult(BaseModel):
    name: str
    passed: bool
    measured: str
    target: str
    seconds: float


class VerifyResponse(BaseModel):
    suite: str
    passed: bool
    checks: list[CheckResult]


class ErrorBody(BaseModel):
    detail: str
    field: Optional[str] = None
