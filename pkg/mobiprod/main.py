import logging

import numpy as np
from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse
from sqlalchemy.orm import Session

from . import __version__, services
from .crud import TableCacheCRUD
from .database import get_db, init_db
from .schemas import ExperimentRequest, ExperimentResponse, ExperimentRowSchema, GenerateRequest, \
    GenerateResponse, InstanceSummary, SimulateRequest, SimulateResponse, TableSummary, TablesRequest, \
    TablesResponse, TrajectorySummary
from .instances import instance_to_dict
from .shared.errors import MobiprodError, SolverError, ValidationError
from .shared.log import configure_logging

logger = logging.getLogger(__name__)

configure_logging()
init_db()

app = FastAPI(title="mobiprod", description="Reconfigurable production-inventory policies and rollout experiments")


def _status_for(exc: MobiprodError) -> int:
    if exc.exit_code == ValidationError.exit_code:
        return 422
    if exc.exit_code == SolverError.exit_code:
        return 409
    return 500


@app.exception_handler(MobiprodError)
async def mobiprod_error_handler(request: Request, exc: MobiprodError):
    logger.warning("%s %s failed: %s", request.method, request.url.path, exc)
    return JSONResponse(status_code=_status_for(exc), content={"detail": str(exc), "error": type(exc).__name__})


@app.get("/health")
def health(db: Session = Depends(get_db)):
    return {
        "service": "mobiprod",
        "status": "running",
        "version": __version__,
        "cached_tables": TableCacheCRUD.count(db),
    }


@app.post("/instances/generate", response_model=GenerateResponse)
def generate_instances(request: GenerateRequest):
    """Generate an instance set; payloads are the same documents the CLI writes to disk."""
    instances = services.generate_instances(request.set_id, request.seed, request.beta, request.horizon)
    total = len(instances)
    if request.limit is not None:
        instances = instances[:request.limit]
    return GenerateResponse(
        count=total,
        instances=[InstanceSummary(**services.summarize(i)) for i in instances],
        payloads=[instance_to_dict(i) for i in instances],
    )


@app.post("/tables", response_model=TablesResponse)
def build_tables(request: TablesRequest, db: Session = Depends(get_db)):
    tables = services.build_tables(request.instance, request.grid_denominator, db)
    summaries = []
    for t in tables:
        stationary = t.grid.stationary_index if t.grid.stationary_index is not None else 0
        summaries.append(TableSummary(
            location=t.location, s_min=t.s_min, s_max=t.s_max, grid_points=len(t.grid),
            iterations=t.iterations, residual=t.residual,
            stationary_base_stock=[int(v) for v in t.base_stock[stationary]],
        ))
    return TablesResponse(instance_id=request.instance.instance_id, tables=summaries)


@app.post("/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest, db: Session = Depends(get_db)):
    config = services.policy_config(request.policy, request.theta, request.mode)
    results = services.simulate(request.instance, config, request.trajectories, request.horizon,
                                request.seed, db)
    return SimulateResponse(
        instance_id=request.instance.instance_id,
        policy=config.label,
        mode=request.mode,
        mean_cost=float(np.mean([r.total_discounted for r in results])),
        trajectories=[TrajectorySummary(index=r.seed[-1], total_discounted=r.total_discounted,
                                        total_undiscounted=r.total_undiscounted) for r in results],
    )


@app.post("/experiments", response_model=ExperimentResponse)
def run_experiment(request: ExperimentRequest, db: Session = Depends(get_db)):
    report = services.experiment(request.instances, request.policies, request.trajectories, request.horizon,
                                 request.seed, request.thetas, request.modes, request.undiscounted, db)
    return ExperimentResponse(
        rows=[ExperimentRowSchema.model_validate(row) for row in report.rows],
        csv=report.to_csv(),
    )
