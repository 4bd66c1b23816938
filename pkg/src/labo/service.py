"""HTTP ask/tell facade over campaigns.

REST/JSON, raw units at the boundary. Every non-2xx response carries
exactly one error body ``{code, message, detail}``. Requests for the same
campaign are serialized through a per-campaign lock; reads are lock-free
snapshot reads.
"""

from __future__ import annotations

import os
import threading
from typing import Optional

from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, field_validator

from .bench import ObjectiveSpec, TaskSpec, synthetic_ids, _SYNTHETIC
from .campaign import Campaign, CampaignActionError
from .engine import LoopConfig, Mode
from .space import DesignSpace, Dimension, SpaceError

_STATUS_BY_CODE = {
    "NotFound": 404,
    "InvalidState": 409,
    "BudgetExhausted": 409,
    "ValidationFailed": 422,
    "OracleUnavailable": 503,
    "Unauthorized": 401,
    "Internal": 500,
}


class ApiError(Exception):
    def __init__(self, code: str, message: str, detail: Optional[dict] = None):
        self.code = code
        self.message = message
        self.detail = detail or {}
        super().__init__(message)

    def response(self) -> JSONResponse:
        status = _STATUS_BY_CODE.get(self.code, 500)
        headers = {"Retry-After": "5"} if self.code == "OracleUnavailable" else None
        return JSONResponse(
            status_code=status,
            content={"code": self.code, "message": self.message, "detail": self.detail},
            headers=headers,
        )


class DimIn(BaseModel):
    name: str
    lower: float
    upper: float
    unit: Optional[str] = None


class OutputRangeIn(BaseModel):
    y_min: float
    y_max: float


class TaskIn(BaseModel):
    name: str = "campaign-task"
    dims: list[DimIn] = Field(min_length=1)
    output_range: OutputRangeIn
    objective: Optional[str] = None  # synthetic function id for demo campaigns


class ConfigIn(BaseModel):
    budget: int = Field(ge=1)
    tau: float = 0.75
    batch_size: int = Field(default=2, ge=1)
    n_init_real: int = Field(default=3, ge=1)
    n_warmup_llm: int = Field(default=50, ge=0)
    seed: int = 0
    max_iterations: int = Field(default=200, ge=1)

    @field_validator("tau")
    @classmethod
    def _tau_open_interval(cls, v):
        if not (0.0 < v < 1.0):
            raise ValueError("tau must lie strictly inside (0, 1)")
        return v


class OracleIn(BaseModel):
    llm_endpoint: str = "synthetic:random"
    auto_real_oracle: str = "none"
    model_name: Optional[str] = None
    api_key_env_var: Optional[str] = None
    temperature: Optional[float] = None
    max_retries: Optional[int] = None
    prior_knowledge: Optional[str] = None
    llm_init: bool = False


class CreateIn(BaseModel):
    task: TaskIn
    config: ConfigIn
    oracle: OracleIn = OracleIn()


class ObservationIn(BaseModel):
    x: list[float]
    y: float


class ObservationsIn(BaseModel):
    observations: list[ObservationIn] = Field(min_length=1)


def _build_task(t: TaskIn, auto_real: str) -> TaskSpec:
    try:
        dims = tuple(Dimension(d.name, d.lower, d.upper, d.unit) for d in t.dims)
        space = DesignSpace(dims, t.output_range.y_min, t.output_range.y_max)
    except SpaceError as e:
        raise ApiError("ValidationFailed", str(e)) from e
    if t.objective is not None:
        if t.objective not in synthetic_ids():
            raise ApiError(
                "ValidationFailed",
                f"unknown objective {t.objective!r}",
                {"known": synthetic_ids()},
            )
        if len(dims) != len(_SYNTHETIC[t.objective].dims):
            raise ApiError(
                "ValidationFailed",
                f"objective {t.objective!r} expects "
                f"{len(_SYNTHETIC[t.objective].dims)} dims, task declares {len(dims)}",
            )
        objective = ObjectiveSpec(kind="synthetic", function_id=t.objective)
    else:
        if auto_real == "synthetic":
            raise ApiError(
                "ValidationFailed",
                "auto_real_oracle=synthetic needs task.objective to name a function",
            )
        objective = ObjectiveSpec(kind="manual")
    return TaskSpec(name=t.name, space=space, objective=objective)


class CampaignRegistry:
    """Open campaigns plus their per-campaign write locks."""

    def __init__(self, root: str):
        self.root = root
        self._campaigns: dict[str, Campaign] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def lock_for(self, campaign_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(campaign_id, threading.Lock())

    def add(self, campaign: Campaign) -> None:
        with self._registry_lock:
            self._campaigns[campaign.state.id] = campaign

    def get(self, campaign_id: str) -> Campaign:
        with self._registry_lock:
            if campaign_id in self._campaigns:
                return self._campaigns[campaign_id]
        try:
            campaign = Campaign.resume(self.root, campaign_id)
        except FileNotFoundError:
            raise ApiError("NotFound", f"no campaign {campaign_id!r}") from None
        with self._registry_lock:
            return self._campaigns.setdefault(campaign_id, campaign)


def create_app(
    storage_root: str,
    token: Optional[str] = None,
    default_llm_endpoint: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="dual-fidelity optimization service")
    registry = CampaignRegistry(storage_root)
    app.state.registry = registry

    def check_token(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise ApiError("Unauthorized", "missing or invalid bearer token")

    @app.exception_handler(ApiError)
    async def _api_error(_req, exc: ApiError):
        return exc.response()

    @app.exception_handler(CampaignActionError)
    async def _action_error(_req, exc: CampaignActionError):
        return ApiError(exc.code, str(exc), exc.detail).response()

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req, exc: RequestValidationError):
        return ApiError("ValidationFailed", "request body failed validation", {
            "errors": [
                {"loc": [str(p) for p in e["loc"]], "msg": e["msg"]} for e in exc.errors()
            ]
        }).response()

    @app.exception_handler(Exception)
    async def _internal_error(_req, exc: Exception):
        return ApiError("Internal", f"{type(exc).__name__}: {exc}").response()

    @app.post("/campaigns", status_code=201)
    def create_campaign(body: CreateIn, _=Depends(check_token)):
        task = _build_task(body.task, body.oracle.auto_real_oracle)
        cfg_kwargs = dict(
            real_budget_T=body.config.budget,
            tau=body.config.tau,
            batch_size=body.config.batch_size,
            n_init_real=body.config.n_init_real,
            n_warmup_llm=body.config.n_warmup_llm,
            seed=body.config.seed,
            max_iterations=body.config.max_iterations,
        )
        try:
            cfg = LoopConfig(**cfg_kwargs)
        except ValueError as e:
            raise ApiError("ValidationFailed", str(e)) from e
        oracle_cfg = {
            k: v
            for k, v in body.oracle.model_dump().items()
            if v is not None
        }
        if default_llm_endpoint and "llm_endpoint" not in body.oracle.model_fields_set:
            oracle_cfg["llm_endpoint"] = default_llm_endpoint
        try:
            campaign = Campaign.create(storage_root, task, cfg, oracle_cfg)
        except CampaignActionError as e:
            raise ApiError(e.code, str(e), e.detail) from e
        except ValueError as e:
            raise ApiError("ValidationFailed", str(e)) from e
        registry.add(campaign)
        return {
            "campaign_id": campaign.state.id,
            "status": campaign.state.status.value,
            "pending": [{"x": list(p["x_raw"])} for p in campaign.state.run.pending],
        }

    @app.get("/campaigns/{campaign_id}")
    def get_campaign(campaign_id: str, _=Depends(check_token)):
        campaign = registry.get(campaign_id)
        st = campaign.state
        return {
            "campaign_id": st.id,
            "status": st.status.value,
            "budget": {
                "real_used": st.run.real_used,
                "real_total": st.cfg.real_budget_T,
                "llm_used": st.run.llm_used,
            },
            "iteration": st.run.iteration,
            "best_so_far": None if not st.run.convergence else st.run.best_so_far,
            "pending": [{"x": list(p["x_raw"])} for p in st.run.pending],
        }

    @app.post("/campaigns/{campaign_id}/suggest")
    def suggest(campaign_id: str, _=Depends(check_token)):
        campaign = registry.get(campaign_id)
        with registry.lock_for(campaign_id):
            return campaign.suggest()

    @app.post("/campaigns/{campaign_id}/observations")
    def observations(campaign_id: str, body: ObservationsIn, _=Depends(check_token)):
        campaign = registry.get(campaign_id)
        with registry.lock_for(campaign_id):
            return campaign.tell([{"x": o.x, "y": o.y} for o in body.observations])

    @app.get("/campaigns/{campaign_id}/history")
    def history(campaign_id: str, _=Depends(check_token)):
        return registry.get(campaign_id).history()

    @app.get("/campaigns/{campaign_id}/diagnostics")
    def diagnostics(campaign_id: str, _=Depends(check_token)):
        return registry.get(campaign_id).diagnostics()

    return app
