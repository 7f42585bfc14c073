"""Orchestration shared by the CLI and the HTTP app."""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd
from sqlalchemy.orm import Session

from .crud import TableCacheCRUD
from .harness import ExperimentReport, REPORT_COLUMNS, TableProvider, TrajectoryResult, initial_module_config, \
    run_experiment, sample_path, simulate_trajectory, stationary_grid, trajectory_seed
from .instances import Instance, gen_set_A, gen_set_B, instance_hash, save_instance, sha256_of
from .modulation import BeliefGrid
from .policies import PolicyConfig, PolicyContext
from .shared.config import settings
from .shared.models import BeliefMode, PolicyId, SetId
from .sl_value import ValueTable, static_value_iteration

logger = logging.getLogger(__name__)


def generate_instances(set_id: SetId, seed: int, beta: Optional[float] = None,
                       horizon: Optional[int] = None) -> List[Instance]:
    beta = settings.beta if beta is None else beta
    horizon = settings.horizon if horizon is None else horizon
    generator = gen_set_A if set_id == SetId.A else gen_set_B
    return generator(seed, beta=beta, horizon=horizon)


def write_instances(instances: Iterable[Instance], out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    paths = []
    for instance in instances:
        path = out_dir / f"{instance.instance_id}.json"
        save_instance(instance, path)
        paths.append(path)
    return paths


def value_tables(instance: Instance, grid: BeliefGrid, db: Optional[Session] = None) -> List[ValueTable]:
    """Tables for every location, read from and written to the cache when a session is given."""
    tables = []
    use_cache = db is not None and settings.table_cache
    for l in range(instance.n_locations):
        key = sha256_of(instance.table_key_fields(l, grid.denominator))
        table = TableCacheCRUD.get(db, key) if use_cache else None
        if table is not None:
            logger.info("table cache hit %s (location %d)", key[:12], l)
        else:
            if use_cache:
                logger.info("table cache miss %s (location %d)", key[:12], l)
            table = static_value_iteration(instance, l, grid)
            if use_cache:
                TableCacheCRUD.put(db, key, table, instance.beta)
        tables.append(table)
    return tables


def table_provider(db: Optional[Session]) -> TableProvider:
    def provide(instance: Instance, grid: BeliefGrid) -> List[ValueTable]:
        return value_tables(instance, grid, db)
    return provide


def build_tables(instance: Instance, grid_denominator: Optional[int] = None,
                 db: Optional[Session] = None) -> List[ValueTable]:
    return value_tables(instance, stationary_grid(instance, grid_denominator), db)


def policy_config(policy: PolicyId, theta: Optional[float], mode: BeliefMode) -> PolicyConfig:
    if theta is None:
        return PolicyConfig(policy=policy, mode=mode)
    return PolicyConfig(policy=policy, theta=theta, mode=mode)


def simulate(instance: Instance, config: PolicyConfig, trajectories: int, horizon: Optional[int],
             seed: int, db: Optional[Session] = None) -> List[TrajectoryResult]:
    """Independent trajectories of one policy, on the same demand streams run_experiment uses."""
    horizon = settings.horizon if horizon is None else horizon
    grid = stationary_grid(instance)
    tables = value_tables(instance, grid, db)
    ctx = PolicyContext(instance, grid, tables)
    u0 = initial_module_config(instance, tables, grid.stationary_index)
    results = []
    for r in range(trajectories):
        seq = trajectory_seed(seed, instance, r)
        results.append(simulate_trajectory(instance, config, ctx, horizon, seq, u0,
                                           sample_path(instance, horizon, seq)))
    return results


def experiment(instances: Sequence[Instance], policies: Sequence[PolicyId],
               trajectories: Optional[int] = None, horizon: Optional[int] = None, seed: int = 0,
               thetas: Optional[Sequence[float]] = None,
               modes: Sequence[BeliefMode] = (BeliefMode.PO,), undiscounted: bool = False,
               db: Optional[Session] = None) -> ExperimentReport:
    return run_experiment(instances, policies, trajectories=trajectories, horizon=horizon,
                          master_seed=seed, thetas=thetas, modes=modes,
                          tables=table_provider(db), undiscounted=undiscounted)


def summarize(instance: Instance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "instance_hash": instance_hash(instance),
        "n_locations": instance.n_locations,
        "n_states": instance.model.n_states,
        "module_size": instance.module_size,
        "transship_cost": instance.transship_cost,
        "module_move_cost": instance.module_move_cost,
    }


def aggregate_reports(paths: Sequence[Union[str, Path]]) -> str:
    """Concatenate report CSVs into one, ordered by instance, policy, theta and mode."""
    frames = [pd.read_csv(p) for p in paths]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=REPORT_COLUMNS)
    frame = frame[REPORT_COLUMNS].sort_values(["instance_id", "policy", "theta", "mode"],
                                              kind="mergesort", na_position="first")
    return frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")
