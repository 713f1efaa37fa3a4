"""Experiment configuration: schema, presets and layered loading.

Values are resolved as preset defaults, then a YAML config file, then command
line overrides (later layers win).  The schema is a set of pydantic models so
the CLI and the HTTP service validate identically.
"""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .contract import ContractParams
from .lsmc import ALGORITHMS, SolverConfig
from .market import ModelParams
from .regression import BASES, TrainConfig

OUTPUT_ENV = "GMWB_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    rate_mode: Literal["constant", "vasicek"] = "constant"
    s0: float = Field(1.0, gt=0)
    r0: float = 0.05
    kappa: float = Field(0.0, ge=0)
    theta: float = 0.05
    sigma_r: float = Field(0.0, ge=0)
    sigma_s: float = Field(0.2, ge=0)
    rho: float = Field(0.0, ge=-1, le=1)

    @model_validator(mode="after")
    def _vasicek_needs_kappa(self):
        if self.rate_mode == "vasicek" and self.kappa <= 0:
            raise ValueError("kappa must be positive in vasicek mode")
        return self


class ContractSpec(_Strict):
    w0: float = Field(1.0, gt=0)
    maturity_years: float = Field(10.0, gt=0)
    frequency: int = Field(1, ge=1)
    penalty: float = Field(0.1, ge=0, le=1)
    fee: float = Field(0.0135, ge=0)


class TrainSpec(_Strict):
    epochs: int = Field(2000, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-5, ge=0)
    batch_size: Optional[int] = Field(None, ge=1)
    seed: int = 0


class SolverSpec(_Strict):
    algorithm: Literal[ALGORITHMS] = "realized_now"
    regressor: Literal["ols", "mlp"] = "ols"
    basis: Optional[str] = None
    grid_size: int = Field(1000, ge=2)
    mixture: tuple[float, float, float] = (0.25, 0.25, 0.5)
    paths: int = Field(10_000, ge=1)
    admissible: Literal["full", "static"] = "full"
    exact_terminal: bool = True
    randomize_start: bool = True
    train: TrainSpec = TrainSpec()

    @model_validator(mode="after")
    def _check(self):
        if self.basis is not None and self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; choose from {sorted(BASES)}")
        if min(self.mixture) < 0 or abs(sum(self.mixture) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if self.algorithm.endswith("later") and self.regressor != "ols":
            raise ValueError("regress-later algorithms need the ols regressor")
        return self


class EstimatorSpec(_Strict):
    runs: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    lower_mode: Literal["fresh", "in_sample"] = "fresh"
    fresh_paths: Optional[int] = Field(None, ge=1)


class OutputSpec(_Strict):
    dir: Optional[str] = None


class ExperimentConfig(_Strict):
    preset: Literal["table1", "table2", "table3", "custom"] = "custom"
    model: ModelSpec = ModelSpec()
    contract: ContractSpec = ContractSpec()
    solver: SolverSpec = SolverSpec()
    estimator: EstimatorSpec = EstimatorSpec()
    output: OutputSpec = OutputSpec()
    threads: int = Field(1, ge=1)

    def model_params(self) -> ModelParams:
        m = self.model
        if m.rate_mode == "constant":
            return ModelParams.constant(m.r0, m.sigma_s, s0=m.s0)
        return ModelParams(s0=m.s0, r0=m.r0, kappa=m.kappa, theta=m.theta, sigma_r=m.sigma_r,
                           sigma_s=m.sigma_s, rho=m.rho, rate_mode="vasicek")

    def contract_params(self) -> ContractParams:
        c = self.contract
        return ContractParams.every(c.maturity_years, c.frequency, w0=c.w0, penalty=c.penalty,
                                    fee=c.fee)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(algorithm=s.algorithm, regressor=s.regressor, basis=s.basis,
                            grid_size=s.grid_size, mixture=tuple(s.mixture), n_paths=s.paths,
                            seed=self.estimator.seed, admissible=s.admissible,
                            exact_terminal=s.exact_terminal,
                            randomize_start=s.randomize_start, threads=self.threads,
                            train=TrainConfig(**s.train.model_dump()))

    def output_dir(self) -> Path:
        import os
        return Path(self.output.dir or os.environ.get(OUTPUT_ENV) or "results")


_TABLE1 = {
    "preset": "table1",
    "model": {"rate_mode": "constant", "r0": 0.05, "sigma_s": 0.2},
    "contract": {"maturity_years": 10, "frequency": 1, "penalty": 0.1, "fee": 0.0135},
    "solver": {"algorithm": "realized_now", "regressor": "ols", "paths": 1_000_000},
    "estimator": {"runs": 20, "lower_mode": "in_sample"},
}

PRESETS = {
    "table1": _TABLE1,
    "table2": {**copy.deepcopy(_TABLE1), "preset": "table2",
               "solver": {"algorithm": "realized_now", "regressor": "ols", "paths": 10_000},
               "estimator": {"runs": 20, "lower_mode": "in_sample"}},
    "table3": {
        "preset": "table3",
        "model": {"rate_mode": "vasicek", "r0": 0.05, "theta": 0.05, "kappa": 0.0349,
                  "sigma_r": 0.02, "rho": 0.3, "sigma_s": 0.05},
        "contract": {"maturity_years": 10, "frequency": 1, "penalty": 0.1, "fee": 0.01},
        "solver": {"algorithm": "realized_now", "regressor": "ols", "paths": 1_000_000},
        "estimator": {"runs": 100, "lower_mode": "in_sample"},
    },
    "custom": {"preset": "custom"},
}


def deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _field_name(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(p) for p in first["loc"]) or "config"


def validate(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        name = _field_name(exc)
        raise ConfigError(f"invalid value for '{name}': {first['msg']}", field=name) from None


def load_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", field="config")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}", field="config")
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping at top level", field="config")
    return data


def build_config(preset: str | None = None, file=None, overrides: dict | None = None
                 ) -> ExperimentConfig:
    """Resolve preset, then file, then overrides into a validated config."""
    file_data = load_file(file) if file else {}
    name = preset or file_data.get("preset") or "custom"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}",
                          field="preset")
    data = deep_merge(PRESETS[name], file_data)
    data = deep_merge(data, overrides or {})
    data["preset"] = name
    return validate(data)
