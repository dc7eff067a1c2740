"""HTTP service wrapping the experiment operations.

Runs are synchronous: desk-scale experiments finish in seconds to a couple
of minutes, so each request blocks until its report is ready.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..reports import report_to_dict
from ..runner import one_baselines, run_experiment, stress_config, stress_run, verify_bounds
from .schemas import (
    HealthResponse,
    OneRequest,
    OneResponse,
    RunRequest,
    RunResponse,
    StressRequest,
    StressResponse,
    VerifyBoundsRequest,
    VerifyBoundsResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="maskcl", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest):
        try:
            report, _, _ = run_experiment(request.config)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return RunResponse(report=report_to_dict(report), timing=report.timing)

    @app.post("/one", response_model=OneResponse)
    def one(request: OneRequest):
        try:
            return OneResponse(report=one_baselines(request.config))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/verify-bounds", response_model=VerifyBoundsResponse)
    def bounds(request: VerifyBoundsRequest):
        return VerifyBoundsResponse(report=verify_bounds(request.trials, request.seed))

    @app.post("/stress", response_model=StressResponse)
    def stress(request: StressRequest):
        try:
            config = stress_config(request.tasks, request.config)
            return StressResponse(report=stress_run(config))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    return app


app = create_app()
