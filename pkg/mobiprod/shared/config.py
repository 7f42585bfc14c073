from decouple import config
from pydantic import BaseModel, ConfigDict


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    database_url: str = config("MOBIPROD_DATABASE_URL", default="sqlite:///./mobiprod_cache.db")
    table_cache: bool = config("MOBIPROD_TABLE_CACHE", default=True, cast=bool)

    beta: float = config("MOBIPROD_BETA", default=0.95, cast=float)
    grid_denominator: int = config("MOBIPROD_GRID_DENOMINATOR", default=3, cast=int)
    max_vi_iters: int = config("MOBIPROD_MAX_VI_ITERS", default=5000, cast=int)

    mip_node_budget: int = config("MOBIPROD_MIP_NODE_BUDGET", default=20000, cast=int)
    # movement costs at or above this level mean "flexibility disabled"
    prohibitive_cost: float = config("MOBIPROD_PROHIBITIVE_COST", default=1000.0, cast=float)

    trajectories: int = config("MOBIPROD_TRAJECTORIES", default=50, cast=int)
    horizon: int = config("MOBIPROD_HORIZON", default=30, cast=int)
    theta: float = config("MOBIPROD_THETA", default=0.2, cast=float)
    record_timing: bool = config("MOBIPROD_RECORD_TIMING", default=True, cast=bool)

    log_level: str = config("MOBIPROD_LOG_LEVEL", default="INFO")


settings = Settings()
