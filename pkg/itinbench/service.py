"""HTTP scoring service over one loaded pool."""

import logging
from contextlib import asynccontextmanager
from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .chat_client import ChatTransportError
from .config import config
from .dataset import BusinessPool, DatasetError, filter_pool, load_pool
from .errors import InvalidInputError, ItinBenchError, UndefinedMetricError
from .metrics import EvaluationBatch, build_report
from .plan_model import PlanParseError, parse_itinerary
from .querygen import PreferenceQuery, sample_queries
from .settings import RunConfig, SolverName, load_run_config, parse_seed_range
from .solvers import SolverError, solve_plan

logger = logging.getLogger(__name__)


class ServiceState:
    """The pool and run configuration the endpoints work against."""

    def __init__(self):
        self.pool: Optional[BusinessPool] = None
        self.run_config: RunConfig = RunConfig()

    def require_pool(self) -> BusinessPool:
        if self.pool is None:
            raise HTTPException(status_code=404, detail="No pool loaded")
        return self.pool


state = ServiceState()


def http_error(e: ItinBenchError) -> HTTPException:
    if isinstance(e, ChatTransportError):
        return HTTPException(status_code=503, detail=str(e))
    if isinstance(e, PlanParseError):
        return HTTPException(status_code=422, detail=str(e))
    if isinstance(e, (InvalidInputError, DatasetError, SolverError, UndefinedMetricError)):
        return HTTPException(status_code=400, detail=str(e))
    return HTTPException(status_code=500, detail=str(e))


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan handler."""
    logger.info("Starting ItinBench scoring service...")
    if state.pool is None and state.run_config.pool_path is not None:
        try:
            state.pool = load_pool(state.run_config.pool_path)
            logger.info(f"Pool loaded: {state.pool.counts()}")
        except ItinBenchError as e:
            logger.error(f"Failed to load pool: {e}")
    logger.info(f"Server running on http://{config.HOST}:{config.PORT}")

    yield

    logger.info("Shutting down...")


app = FastAPI(title="ItinBench Scoring Service", lifespan=lifespan)


class SampleRequest(BaseModel):
    seeds: str = "0-9"


class SolveRequest(BaseModel):
    query: PreferenceQuery
    solver: SolverName = "greedy"


class EvaluateItem(BaseModel):
    plan: Any
    query: PreferenceQuery
    filtered: bool = False


class EvaluateRequest(BaseModel):
    plans: list[EvaluateItem]


@app.get("/api/health")
def health():
    return {"status": "ok", "pool_loaded": state.pool is not None}


@app.get("/api/pool")
def get_pool():
    """City and per-category counts of the loaded pool."""
    pool = state.require_pool()
    return {"city": pool.city, "counts": pool.counts()}


@app.post("/api/queries/sample")
def sample(request: SampleRequest):
    try:
        queries = sample_queries(parse_seed_range(request.seeds))
    except ItinBenchError as e:
        raise http_error(e)
    return {"queries": [q.model_dump() for q in queries]}


@app.post("/api/solve")
def solve(request: SolveRequest):
    """Plan one query over the preference-filtered pool."""
    pool = state.require_pool()
    metric_config = state.run_config.metrics
    try:
        filtered = filter_pool(pool, request.query, metric_config.filters)
        plan = solve_plan(
            filtered, request.query, request.solver, metric_config.daily_quota, metric_config.node_cap
        )
    except ItinBenchError as e:
        raise http_error(e)
    return {"source": plan.source, "query_ref": plan.query_ref, "days": plan.to_document()}


@app.post("/api/evaluate")
def evaluate(request: EvaluateRequest):
    pool = state.require_pool()
    metric_config = state.run_config.metrics
    try:
        plans = []
        for item in request.plans:
            given = filter_pool(pool, item.query, metric_config.filters) if item.filtered else pool
            plans.append((parse_itinerary(item.plan, query_ref=item.query.id), item.query, given))
        report = build_report(EvaluationBatch(plans, metric_config), include_records=False)
    except ItinBenchError as e:
        raise http_error(e)
    return {"table": report.table_row(), "report": report.model_dump(mode="json")}


def configure(run_config_path: Optional[str] = None, pool: Optional[BusinessPool] = None) -> None:
    """Point the service at a run config and, optionally, an already loaded pool."""
    if run_config_path is not None:
        state.run_config = load_run_config(run_config_path)
    if pool is not None:
        state.pool = pool
