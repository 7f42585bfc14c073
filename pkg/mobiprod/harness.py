"""Monte Carlo rollout of the period chronology, experiment runner and the joint oracle.

Period chronology: relocate inventory and modules, order up to y, the
modulation chain moves, demand is realized and charged, inventory becomes
y - d and the belief is updated according to the simulation mode.
"""
import itertools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .instances import Instance, demand_instance_key
from .modulation import BeliefGrid, belief_grid, nearest_grid_index, posterior, \
    sigma, stationary_distribution
from .policies import Action, Policy, PolicyConfig, PolicyContext, SystemState, flexibility, \
    movement_cost, relocations, validate_action
from .shared.config import settings
from .shared.errors import MobiprodError, SizeExceeded, TrajectoryAborted, ZeroLikelihood
from .shared.models import BeliefMode, PolicyId, THETA_FREE_POLICIES
from .sl_value import ValueTable, build_value_tables

logger = logging.getLogger(__name__)

ORACLE_STATE_LIMIT = 1_000_000
REPORT_COLUMNS = ["instance_id", "policy", "theta", "mode", "mean_cost",
                  "savings_vs_dnf_pct", "sec_per_trajectory"]

TableProvider = Callable[[Instance, BeliefGrid], List[ValueTable]]


@dataclass(frozen=True)
class PeriodCost:
    holding: float
    backorder: float
    transship: float
    module_move: float

    @property
    def total(self) -> float:
        return self.holding + self.backorder + self.transship + self.module_move


@dataclass(frozen=True)
class SamplePath:
    """Modulation states mu(0..T) and demand vectors realized in periods 1..T."""

    states: np.ndarray
    demands: np.ndarray


@dataclass
class TrajectoryResult:
    total_discounted: float
    total_undiscounted: float
    periods: List[PeriodCost]
    actions: List[Action]
    path: SamplePath
    seed: Tuple[int, ...]
    seconds: float = 0.0


@dataclass(frozen=True)
class ExperimentRow:
    instance_id: str
    policy: str
    theta: Optional[float]
    mode: str
    mean_cost: float
    savings_vs_dnf_pct: Optional[float]
    sec_per_trajectory: Optional[float]


@dataclass
class ExperimentReport:
    rows: List[ExperimentRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=REPORT_COLUMNS)

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        text = self.to_frame().to_csv(index=False, float_format="%.10g", lineterminator="\n")
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def savings(cost_policy: float, cost_dnf: float) -> Optional[float]:
    """Percent saved relative to the DNF benchmark; None when the benchmark costs nothing."""
    if cost_dnf == 0.0:
        return None
    return 100.0 * (cost_dnf - cost_policy) / abs(cost_dnf)


def stationary_grid(instance: Instance, denominator: Optional[int] = None) -> BeliefGrid:
    pi = stationary_distribution(instance.model).pi
    return belief_grid(instance.model.n_states, denominator or settings.grid_denominator, pi)


def initial_module_config(instance: Instance, tables: Sequence[ValueTable], gp: int) -> Tuple[int, ...]:
    """Allocation of the Y modules minimizing the summed table value at zero inventory."""
    L, Y = instance.n_locations, instance.n_modules
    costs = [np.array([t.lookup(gp, 0, u) for u in range(instance.module_cap[l] + 1)])
             for l, t in enumerate(tables)]
    # to_go[l][r]: cheapest placement of r modules over locations l..L-1
    to_go = [np.full(Y + 1, np.inf) for _ in range(L + 1)]
    to_go[L][0] = 0.0
    for l in range(L - 1, -1, -1):
        for r in range(Y + 1):
            for u in range(min(r, instance.module_cap[l]) + 1):
                to_go[l][r] = min(to_go[l][r], costs[l][u] + to_go[l + 1][r - u])
    config = []
    remaining = Y
    for l in range(L):
        target = to_go[l][remaining]
        for u in range(min(remaining, instance.module_cap[l]), -1, -1):
            if costs[l][u] + to_go[l + 1][remaining - u] <= target + 1e-9 * max(1.0, abs(target)):
                config.append(u)
                remaining -= u
                break
    return tuple(config)


def trajectory_seed(master_seed: int, instance: Instance, r: int) -> np.random.SeedSequence:
    """Stream for trajectory r; shared by every policy and movement-cost variant of a demand instance."""
    key = int(demand_instance_key(instance)[:15], 16)
    return np.random.SeedSequence(master_seed, spawn_key=(key, r))


def sample_path(instance: Instance, horizon: int, seed: np.random.SeedSequence) -> SamplePath:
    model = instance.model
    rng = np.random.default_rng(seed)
    pi = stationary_distribution(model).pi
    states = np.empty(horizon + 1, dtype=np.int64)
    states[0] = rng.choice(model.n_states, p=pi)
    demands = np.empty((horizon, model.n_locations), dtype=np.int64)
    for t in range(horizon):
        states[t + 1] = rng.choice(model.n_states, p=model.P[states[t]])
        for l in range(model.n_locations):
            demands[t, l] = model.outcomes[rng.choice(model.n_outcomes, p=model.O[l, states[t + 1]])]
    return SamplePath(states=states, demands=demands)


def _indicator(n: int, j: int) -> np.ndarray:
    e = np.zeros(n)
    e[j] = 1.0
    return e


def simulate_trajectory(instance: Instance, config: PolicyConfig, ctx: PolicyContext,
                        horizon: int, seed: np.random.SeedSequence,
                        initial_modules: Sequence[int], path: Optional[SamplePath] = None) -> TrajectoryResult:
    """Roll one policy forward along a pre-drawn demand path."""
    started = time.perf_counter()
    policy = Policy(config, ctx)
    path = path or sample_path(instance, horizon, seed)
    model = instance.model
    pi = stationary_distribution(model).pi
    x = _indicator(model.n_states, int(path.states[0])) if config.mode == BeliefMode.CO else pi
    s = (0,) * instance.n_locations
    u = tuple(initial_modules)
    periods, actions = [], []
    discounted = undiscounted = 0.0
    for t in range(horizon):
        state = SystemState(x=x, s=s, u=u)
        try:
            action = policy.act(state)
            validate_action(instance, state, action)
        except MobiprodError as e:
            raise TrajectoryAborted(f"{config.label} on {instance.instance_id}", t, e) from e
        d = path.demands[t]
        transship, modules = movement_cost(instance, state, action)
        held = sum(instance.holding[l] * max(action.y[l] - int(d[l]), 0) for l in range(instance.n_locations))
        short = sum(instance.backorder[l] * max(int(d[l]) - action.y[l], 0) for l in range(instance.n_locations))
        cost = PeriodCost(holding=held, backorder=short, transship=transship, module_move=modules)
        periods.append(cost)
        actions.append(action)
        discounted += instance.beta ** t * cost.total
        undiscounted += cost.total
        s = tuple(int(action.y[l] - d[l]) for l in range(instance.n_locations))
        u = action.u_next
        if config.mode == BeliefMode.PO:
            try:
                x = posterior(model, d.tolist(), None, x)
            except ZeroLikelihood as e:
                raise TrajectoryAborted("belief update", t, e) from e
        elif config.mode == BeliefMode.CO:
            x = _indicator(model.n_states, int(path.states[t + 1]))
    return TrajectoryResult(total_discounted=discounted, total_undiscounted=undiscounted,
                            periods=periods, actions=actions, path=path,
                            seed=tuple(seed.spawn_key), seconds=time.perf_counter() - started)


def expand_configs(policies: Sequence[PolicyId], thetas: Sequence[float],
                   modes: Sequence[BeliefMode]) -> List[PolicyConfig]:
    """One config per (policy, theta, mode); theta-free policies once per mode; DNF always included."""
    wanted = list(dict.fromkeys([PolicyId.DNF, *policies]))
    configs = []
    for mode in modes:
        for policy in wanted:
            if policy in THETA_FREE_POLICIES:
                configs.append(PolicyConfig(policy=policy, mode=mode))
            else:
                configs.extend(PolicyConfig(policy=policy, theta=theta, mode=mode) for theta in thetas)
    return configs


def _default_tables(instance: Instance, grid: BeliefGrid) -> List[ValueTable]:
    return build_value_tables(instance, grid)


def run_experiment(instances: Sequence[Instance], policies: Sequence[PolicyId],
                   trajectories: Optional[int] = None, horizon: Optional[int] = None,
                   master_seed: int = 0, thetas: Optional[Sequence[float]] = None,
                   modes: Sequence[BeliefMode] = (BeliefMode.PO,),
                   tables: Optional[TableProvider] = None,
                   record_timing: Optional[bool] = None,
                   undiscounted: bool = False) -> ExperimentReport:
    """Sample-average cost of every policy on every instance, with savings over DNF.

    Demand paths are drawn once per (instance, trajectory) and replayed for
    every policy.  MP and MNF rows are compared with DNF at the first theta.
    """
    trajectories = trajectories or settings.trajectories
    horizon = settings.horizon if horizon is None else horizon
    thetas = list(thetas) if thetas else [settings.theta]
    record_timing = settings.record_timing if record_timing is None else record_timing
    tables = tables or _default_tables
    configs = expand_configs(policies, thetas, modes)
    report = ExperimentReport()
    for i, instance in enumerate(instances):
        grid = stationary_grid(instance)
        value_tables = tables(instance, grid)
        ctx = PolicyContext(instance, grid, value_tables)
        allow_s, allow_m = flexibility(instance)
        if not (allow_s and allow_m):
            logger.warning("%s: prohibitive costs disable %s", instance.instance_id,
                           " and ".join(n for n, ok in (("transshipment", allow_s), ("module moves", allow_m)) if not ok))
        u0 = initial_module_config(instance, value_tables, grid.stationary_index)
        seeds = [trajectory_seed(master_seed, instance, r) for r in range(trajectories)]
        paths = [sample_path(instance, horizon, seq) for seq in seeds]
        means: Dict[Tuple[PolicyId, Optional[float], BeliefMode], Tuple[float, float]] = {}
        for config in configs:
            results = [simulate_trajectory(instance, config, ctx, horizon, seq, u0, path)
                       for seq, path in zip(seeds, paths)]
            totals = [r.total_undiscounted if undiscounted else r.total_discounted for r in results]
            theta = None if config.policy in THETA_FREE_POLICIES else config.theta
            means[(config.policy, theta, config.mode)] = (
                float(np.mean(totals)), sum(r.seconds for r in results) / len(results))
        for (policy, theta, mode), (mean_cost, seconds) in means.items():
            benchmark = means[(PolicyId.DNF, thetas[0] if theta is None else theta, mode)][0]
            report.rows.append(ExperimentRow(
                instance_id=instance.instance_id, policy=policy.value, theta=theta, mode=mode.value,
                mean_cost=mean_cost, savings_vs_dnf_pct=savings(mean_cost, benchmark),
                sec_per_trajectory=seconds if record_timing else None,
            ))
        logger.info("instance %d/%d %s: %d configs x %d trajectories",
                    i + 1, len(instances), instance.instance_id, len(configs), trajectories)
    return report


def savings_table(report: ExperimentReport, instances: Sequence[Instance], by: str) -> pd.DataFrame:
    """Mean savings over DNF per policy, grouped by an instance factor."""
    factors = {
        "G": lambda inst: inst.module_size,
        "N": lambda inst: inst.model.n_states,
        "phi": lambda inst: inst.staying_probability,
        "L": lambda inst: inst.n_locations,
        "KS": lambda inst: inst.transship_cost,
        "KM": lambda inst: inst.module_move_cost,
    }
    if by not in factors:
        raise KeyError(f"unknown factor {by!r}; choose from {sorted(factors)}")
    lookup = {inst.instance_id: factors[by](inst) for inst in instances}
    frame = report.to_frame()
    frame = frame[frame["policy"] != PolicyId.DNF.value].copy()
    frame[by] = frame["instance_id"].map(lookup)
    frame["label"] = frame["policy"] + frame["theta"].map(lambda t: "" if pd.isna(t) else f"(theta={t:g})")
    return frame.pivot_table(index=by, columns="label", values="savings_vs_dnf_pct", aggfunc="mean")


def mobility_value_table(report: ExperimentReport, instances: Sequence[Instance],
                         policy: PolicyId = PolicyId.LAJ) -> pd.DataFrame:
    """Mean savings of one policy over DNF on the K^S x K^M grid."""
    costs = {inst.instance_id: (inst.transship_cost, inst.module_move_cost) for inst in instances}
    frame = report.to_frame()
    frame = frame[frame["policy"] == policy.value].copy()
    frame["KS"] = frame["instance_id"].map(lambda i: costs[i][0])
    frame["KM"] = frame["instance_id"].map(lambda i: costs[i][1])
    return frame.pivot_table(index="KS", columns="KM", values="savings_vs_dnf_pct", aggfunc="mean")


@dataclass(frozen=True)
class OracleTable:
    """n-step joint values over (grid point, inventory vector, module vector)."""

    grid: BeliefGrid
    s_range: Tuple[int, int]
    module_configs: Tuple[Tuple[int, ...], ...]
    values: Dict[Tuple[int, Tuple[int, ...], Tuple[int, ...]], float]

    def value(self, gp: int, s: Sequence[int], u: Sequence[int]) -> float:
        return self.values[(gp, tuple(s), tuple(u))]


def module_configs(instance: Instance) -> List[Tuple[int, ...]]:
    ranges = [range(c + 1) for c in instance.module_cap]
    return [u for u in itertools.product(*ranges) if sum(u) == instance.n_modules]


def joint_value_oracle(instance: Instance, grid: BeliefGrid, horizon: int,
                       s_range: Tuple[int, int] = (-2, 2), snap_to_grid: bool = True) -> OracleTable:
    """Exact n-step joint values by enumerating every action and demand outcome.

    Inventory outside ``s_range`` is valued at the boundary plus the same
    affine tails the single-location tables use.  Without snapping, beliefs
    evolve exactly and are memoized on their rounded coordinates.
    """
    L = instance.n_locations
    s_lo, s_hi = s_range
    configs = module_configs(instance)
    n_states = len(grid) * (s_hi - s_lo + 1) ** L * len(configs)
    if n_states > ORACLE_STATE_LIMIT:
        raise SizeExceeded(f"oracle state space {n_states} exceeds {ORACLE_STATE_LIMIT}")
    model = instance.model
    outcomes = list(itertools.product(model.outcomes, repeat=L))
    low = [b / (1.0 - instance.beta) for b in instance.backorder]
    high = [h / (1.0 - instance.beta) for h in instance.holding]
    memo: Dict[tuple, float] = {}
    beliefs: Dict[tuple, np.ndarray] = {}

    def belief_key(x: np.ndarray) -> tuple:
        if snap_to_grid:
            return ("g", nearest_grid_index(grid, x))
        key = ("x",) + tuple(np.round(x, 12))
        beliefs.setdefault(key, x)
        return key

    def belief_of(key: tuple) -> np.ndarray:
        return grid.point(key[1]) if key[0] == "g" else beliefs[key]

    def clamp(s: Tuple[int, ...]) -> Tuple[Tuple[int, ...], float]:
        tail = 0.0
        clamped = []
        for l, v in enumerate(s):
            if v < s_lo:
                tail += (s_lo - v) * low[l]
            elif v > s_hi:
                tail += (v - s_hi) * high[l]
            clamped.append(min(max(v, s_lo), s_hi))
        return tuple(clamped), tail

    def value(k: int, key: tuple, s: Tuple[int, ...], u: Tuple[int, ...]) -> float:
        if k == 0:
            return 0.0
        memo_key = (k, key, s, u)
        if memo_key in memo:
            return memo[memo_key]
        x = belief_of(key)
        scenario = []
        for d in outcomes:
            w = sigma(model, d, None, x)
            if w > 0.0:
                scenario.append((d, w, belief_key(posterior(model, d, None, x))))
        state = SystemState(x=x, s=s, u=u)
        best = np.inf
        for delta_s, u_next in relocations(instance, state):
            move = movement_cost(instance, state, Action(delta_s, u_next, s))
            base = sum(move)
            y_ranges = [range(s[l] + delta_s[l], s[l] + delta_s[l] + instance.capacity(l, u_next[l]) + 1)
                        for l in range(L)]
            for y in itertools.product(*y_ranges):
                total = base
                for d, w, next_key in scenario:
                    period = sum(instance.period_cost(l, y[l], d[l]) for l in range(L))
                    s_next, tail = clamp(tuple(y[l] - d[l] for l in range(L)))
                    total += w * (period + instance.beta * (value(k - 1, next_key, s_next, u_next) + tail))
                    if total >= best:
                        break
                if total < best:
                    best = total
        memo[memo_key] = float(best)
        return memo[memo_key]

    values = {}
    for gp in range(len(grid)):
        start = ("g", gp) if snap_to_grid else belief_key(grid.point(gp))
        for s in itertools.product(range(s_lo, s_hi + 1), repeat=L):
            for u in configs:
                values[(gp, s, u)] = value(horizon, start, s, u)
    logger.info("joint oracle: %d states, %d memo entries", len(values), len(memo))
    return OracleTable(grid=grid, s_range=s_range, module_configs=tuple(configs), values=values)
