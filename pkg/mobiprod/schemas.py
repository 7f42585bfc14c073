from typing import List, Optional

from pydantic import BaseModel, Field

from .instances import Instance
from .shared.models import BeliefMode, PolicyId, SetId


class GenerateRequest(BaseModel):
    set_id: SetId
    seed: int = 0
    beta: Optional[float] = Field(None, ge=0, lt=1)
    horizon: Optional[int] = Field(None, ge=0)
    limit: Optional[int] = Field(None, ge=1, description="Return only the first instances")


class InstanceSummary(BaseModel):
    instance_id: str
    instance_hash: str
    n_locations: int
    n_states: int
    module_size: int
    transship_cost: Optional[float] = None
    module_move_cost: float


class GenerateResponse(BaseModel):
    count: int
    instances: List[InstanceSummary]
    payloads: List[dict] = []


class TablesRequest(BaseModel):
    instance: Instance
    grid_denominator: Optional[int] = Field(None, ge=1)


class TableSummary(BaseModel):
    location: int
    s_min: int
    s_max: int
    grid_points: int
    iterations: int
    residual: float
    stationary_base_stock: List[int]


class TablesResponse(BaseModel):
    instance_id: str
    tables: List[TableSummary]


class SimulateRequest(BaseModel):
    instance: Instance
    policy: PolicyId
    theta: Optional[float] = Field(None, ge=0, le=1)
    mode: BeliefMode = BeliefMode.PO
    trajectories: int = Field(10, ge=1)
    horizon: Optional[int] = Field(None, ge=0)
    seed: int = 0


class TrajectorySummary(BaseModel):
    index: int
    total_discounted: float
    total_undiscounted: float

    class Config:
        from_attributes = True


class SimulateResponse(BaseModel):
    instance_id: str
    policy: str
    mode: BeliefMode
    mean_cost: float
    trajectories: List[TrajectorySummary]


class ExperimentRequest(BaseModel):
    instances: List[Instance] = Field(..., min_length=1)
    policies: List[PolicyId] = Field(..., min_length=1)
    thetas: Optional[List[float]] = None
    modes: List[BeliefMode] = [BeliefMode.PO]
    trajectories: int = Field(10, ge=1)
    horizon: Optional[int] = Field(None, ge=0)
    seed: int = 0
    undiscounted: bool = False


class ExperimentRowSchema(BaseModel):
    instance_id: str
    policy: str
    theta: Optional[float] = None
    mode: str
    mean_cost: float
    savings_vs_dnf_pct: Optional[float] = None
    sec_per_trajectory: Optional[float] = None

    class Config:
        from_attributes = True


class ExperimentResponse(BaseModel):
    rows: List[ExperimentRowSchema]
    csv: str
