"""FastAPI application: ``uvicorn gmwb.service.app:app``."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import ConfigError, ExperimentConfig
from ..estimators import EstimatorError
from ..lsmc import SolverError
from ..verify import SUITES
from . import handlers
from .schemas import FeeRequest, FeeResponse, PriceResponse, VerifyResponse

app = FastAPI(title="gmwb", version=__version__)


@app.exception_handler(ConfigError)
async def _config_error(_, exc: ConfigError):
    return JSONResponse(status_code=422, content={"detail": str(exc), "field": exc.field})


@app.exception_handler(SolverError)
@app.exception_handler(EstimatorError)
async def _solver_error(_, exc: Exception):
    return JSONResponse(status_code=500, content={"detail": str(exc)})


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/price", response_model=PriceResponse)
def price(cfg: ExperimentConfig):
    return handlers.price(cfg)


@app.post("/fair-fee", response_model=FeeResponse)
def fair_fee(req: FeeRequest):
    return handlers.fair_fee(req)


@app.post("/verify/{suite}", response_model=VerifyResponse)
def verify(suite: str):
    if suite not in SUITES:
        raise HTTPException(status_code=404, detail=f"unknown suite {suite!r}")
    return handlers.verify(suite)
