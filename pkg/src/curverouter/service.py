"""HTTP decision service: a thin JSON wrapper around a loaded checkpoint.

The checkpoint is read once at startup and never mutated, so any number of
concurrent requests can route against it. The service adds no logic beyond
parsing: a /route response is exactly the library decision for the same
inputs. Malformed bodies and wrong embedding dimensions come back as 400;
an infeasible budget limit as 422.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .predictors import CHECKPOINT_FORMAT, RouterModel, load_checkpoint
from .routing import NoFeasibleBudgetError, RoutingMode, RoutingPolicy, route


class RouteRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    embedding: list[float]
    lam: float = Field(alias="lambda", ge=0.0, le=1.0)
    budget_limit: int | None = Field(default=None, gt=0)
    mode: RoutingMode = RoutingMode.DISCRETE


class RouteResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    query_id: str = ""
    model_id: str
    budget: int
    predicted_quality: float
    predicted_cost_usd: float
    score: float
    instruction: str


class HealthResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    status: str
    model_format: str
    pool_size: int


def create_app(model: RouterModel) -> FastAPI:
    """Build the service around an immutable router model."""
    app = FastAPI(title="curverouter", version="0.1.0")
    max_level = max(model.levels)

    @app.exception_handler(RequestValidationError)
    async def _validation_as_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", model_format=CHECKPOINT_FORMAT, pool_size=len(model.pool))

    @app.post("/route", response_model=RouteResponse)
    async def route_query(req: RouteRequest) -> RouteResponse:
        emb = np.asarray(req.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.shape[0] != model.embedding_dim:
            raise HTTPException(
                status_code=400,
                detail=f"dimension mismatch: expected {model.embedding_dim} components, got {emb.shape[0]}",
            )
        if not np.all(np.isfinite(emb)):
            raise HTTPException(status_code=400, detail="embedding has non-finite components")
        policy = RoutingPolicy(
            lam=req.lam,
            budget_limit=req.budget_limit if req.budget_limit is not None else max_level,
            mode=req.mode,
        )
        try:
            decision = route(model, emb, policy)
        except NoFeasibleBudgetError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        return RouteResponse(**decision.record(query_id=""))

    return app


def app_from_checkpoint(path: str) -> FastAPI:
    return create_app(load_checkpoint(path))
