"""
FastAPI application exposing the ATS engine.

Run from this directory with the repository root on the path:
    PYTHONPATH=.. uvicorn main:app --reload
"""

import os
from typing import List, Literal, Optional, Tuple

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from charts import Direction, ShewhartTbeConfig
from errors import CalibrationError, ConfigError, EstimateInvalidError, MtbeError
from model_gumbel import MIN_DELTA, GumbelBveParams, moments
from scenarios import AlarmClock, PointProcessScenario, ShiftSpec, VectorScenario
from simulation import ChartFamily, Mode, build_chart, calibrate, estimate_ats

# Get port from environment variable with a default value
PORT = int(os.getenv("PORT", 10000))
# Requests above this many runs are refused; the CLI has no such limit
MAX_REPS = int(os.getenv("MTBE_MAX_REPS", 200_000))

app = FastAPI(
    title="MTBE monitoring API",
    description="Average time to signal and control-limit calibration for time-between-events charts"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"]
)


class ModelRequest(BaseModel):
    theta1: float = Field(..., gt=0, description="Mean time-between-events of stream 1")
    theta2: float = Field(..., gt=0, description="Mean time-between-events of stream 2")
    delta: float = Field(1.0, ge=MIN_DELTA, le=1.0, description="Dependence parameter, 1 = independent")

    def params(self) -> GumbelBveParams:
        return GumbelBveParams(self.theta1, self.theta2, self.delta)


class MomentsResponse(BaseModel):
    mean: List[float]
    covariance: List[List[float]]
    correlation: float


class AtsRequest(BaseModel):
    model: ModelRequest
    family: ChartFamily = Field(..., description="mewma, pewma or shewhart")
    lam: float = Field(0.1, gt=0, le=1, description="EWMA smoothing constant")
    direction: Direction = Direction.UPPER
    limit: Optional[float] = Field(None, gt=0, description="h for mewma, proportional scale c for pewma")
    shewhart_lower: Optional[Tuple[float, float]] = None
    shewhart_upper: Optional[Tuple[float, float]] = None
    shift: Tuple[float, float] = (1.0, 1.0)
    mode: Mode = Mode.STEADY_STATE
    clock: AlarmClock = AlarmClock.COMPLETE_VECTOR
    n_reps: int = Field(10_000, ge=1)
    seed: int = Field(0, ge=0)


class AtsResponse(BaseModel):
    mean_ats: float
    std_error: Optional[float]
    n_runs: int
    n_discarded: int
    n_censored: int
    mean_run_length: float


class CalibrationRequest(BaseModel):
    model: ModelRequest
    family: Literal["mewma", "pewma"]
    lam: float = Field(..., gt=0, le=1)
    direction: Direction = Direction.UPPER
    target_ats0: float = Field(200.0, gt=0)
    rel_tol: float = Field(0.01, gt=0, le=0.1)
    reps_per_eval: int = Field(2_000, ge=1)
    n_reps: int = Field(10_000, ge=1)
    clock: AlarmClock = AlarmClock.COMPLETE_VECTOR
    seed: int = Field(0, ge=0)


class CalibrationResponse(BaseModel):
    limit: float
    limits: List[float]
    limit_spec: str
    achieved_ats0: float
    std_error: Optional[float]
    iterations: int
    within_tolerance: bool


def _check_reps(*counts: int) -> None:
    if max(counts) > MAX_REPS:
        raise HTTPException(status_code=400, detail=f"at most {MAX_REPS} runs per request")


def _as_http_error(e: MtbeError) -> HTTPException:
    if isinstance(e, ConfigError):
        return HTTPException(status_code=400, detail=str(e))
    if isinstance(e, (CalibrationError, EstimateInvalidError)):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=500, detail=f"An unexpected error occurred: {e}")


@app.post("/moments", response_model=MomentsResponse)
async def model_moments(request: ModelRequest):
    """Mean vector and covariance matrix of the in-control model."""
    try:
        summary = moments(request.params())
    except MtbeError as e:
        raise _as_http_error(e)
    return MomentsResponse(
        mean=summary.mean.tolist(),
        covariance=summary.covariance.tolist(),
        correlation=summary.correlation,
    )


@app.post("/ats", response_model=AtsResponse)
def average_time_to_signal(request: AtsRequest):
    """
    Monte Carlo ATS for a chart with given limits. Shewhart charts are run on
    independent point processes, the EWMA charts on complete vectors.
    """
    _check_reps(request.n_reps)
    try:
        params = request.model.params()
        shift = ShiftSpec(*request.shift)
        if request.family is ChartFamily.SHEWHART:
            if request.shewhart_lower is None or request.shewhart_upper is None:
                raise ConfigError("shewhart charts need shewhart_lower and shewhart_upper")
            chart = ShewhartTbeConfig(request.shewhart_lower, request.shewhart_upper)
            scenario = PointProcessScenario((params.theta1, params.theta2), request.shift)
        else:
            if request.limit is None:
                raise ConfigError("EWMA charts need a limit")
            chart = build_chart(request.family, params, request.lam, request.limit, request.direction)
            scenario = VectorScenario(params, shift)
        estimate = estimate_ats(scenario, chart, request.mode, request.n_reps, request.seed, clock=request.clock)
    except MtbeError as e:
        raise _as_http_error(e)
    return AtsResponse(
        mean_ats=estimate.mean_ats,
        std_error=estimate.std_error if estimate.std_error_defined else None,
        n_runs=estimate.n_runs,
        n_discarded=estimate.n_discarded,
        n_censored=estimate.n_censored,
        mean_run_length=estimate.mean_run_length,
    )


@app.post("/calibrate", response_model=CalibrationResponse)
def calibrate_limits(request: CalibrationRequest):
    """Control limits giving the requested in-control ATS."""
    _check_reps(request.n_reps, request.reps_per_eval)
    try:
        result = calibrate(
            request.model.params(), ChartFamily(request.family), request.lam,
            target_ats0=request.target_ats0, rel_tol=request.rel_tol, reps_per_eval=request.reps_per_eval,
            base_seed=request.seed, direction=request.direction, n_reps=request.n_reps, clock=request.clock,
        )
    except MtbeError as e:
        raise _as_http_error(e)
    return CalibrationResponse(
        limit=result.limit,
        limits=list(result.limits),
        limit_spec=result.limit_spec,
        achieved_ats0=result.achieved_ats0,
        std_error=result.std_error if result.n_reps > 1 else None,
        iterations=result.iterations,
        within_tolerance=result.within_tolerance,
    )


@app.get("/")
async def root():
    """
    Root endpoint - health check
    """
    return {
        "status": "ok",
        "message": "MTBE monitoring API is running"
    }
