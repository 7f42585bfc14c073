"""The seven control policies: state -> (transshipment, modules, order-up-to)."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .instances import Instance
from .modulation import BeliefGrid, check_belief, expected_demand, local_demand_pmf, local_posterior, \
    nearest_grid_index
from .optimizer import EQ, GE, LE, MipProblem, Option, ProblemBuilder, is_integral, \
    solve_lp, solve_mip, solve_relocation_dp
from .shared.config import settings
from .shared.errors import InvalidAction, Prop2Violation
from .shared.models import BeliefMode, PolicyId, THETA_FREE_POLICIES
from .sl_value import FacetSet, ValueTable, blended_value, extract_facets, myopic_base_stock

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SystemState:
    x: np.ndarray
    s: Tuple[int, ...]
    u: Tuple[int, ...]


@dataclass(frozen=True)
class Action:
    delta_s: Tuple[int, ...]
    u_next: Tuple[int, ...]
    y: Tuple[int, ...]

    def as_dict(self) -> dict:
        return {"delta_s": list(self.delta_s), "u_next": list(self.u_next), "y": list(self.y)}


class PolicyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    policy: PolicyId
    theta: float = Field(default_factory=lambda: settings.theta, ge=0.0, le=1.0)
    mode: BeliefMode = BeliefMode.PO

    @model_validator(mode="after")
    def warn_unused_theta(self):
        if self.policy in THETA_FREE_POLICIES and "theta" in self.model_fields_set:
            logger.warning("theta=%s is ignored by %s", self.theta, self.policy.value)
        return self

    @property
    def label(self) -> str:
        if self.policy in THETA_FREE_POLICIES:
            return self.policy.value
        return f"{self.policy.value}(theta={self.theta:g})"


def transship_bounds(s: Sequence[int], l: int) -> Tuple[int, int]:
    """Range of inventory location l may receive (negative: send)."""
    positive = [max(v, 0) for v in s]
    return -positive[l], sum(positive) - positive[l]


def flexibility(instance: Instance) -> Tuple[bool, bool]:
    """(transshipment allowed, module moves allowed) given the prohibitive-cost sentinel."""
    lane = min(instance.transship_in) + min(instance.transship_out)
    return lane < settings.prohibitive_cost, instance.module_move_cost < settings.prohibitive_cost


def validate_action(instance: Instance, state: SystemState, action: Action) -> None:
    L = instance.n_locations
    if not (len(action.delta_s) == len(action.u_next) == len(action.y) == L):
        raise InvalidAction("action vectors must have one entry per location")
    if sum(action.delta_s) != 0:
        raise InvalidAction(f"transshipments do not balance: {action.delta_s}")
    if sum(action.u_next) != instance.n_modules:
        raise InvalidAction(f"module count changed: {action.u_next}")
    for l in range(L):
        lo, hi = transship_bounds(state.s, l)
        if not lo <= action.delta_s[l] <= hi:
            raise InvalidAction(f"location {l}: transshipment {action.delta_s[l]} outside [{lo}, {hi}]")
        if not 0 <= action.u_next[l] <= instance.module_cap[l]:
            raise InvalidAction(f"location {l}: {action.u_next[l]} modules outside [0, {instance.module_cap[l]}]")
        s_after = state.s[l] + action.delta_s[l]
        reach = s_after + instance.capacity(l, action.u_next[l])
        if not s_after <= action.y[l] <= reach:
            raise InvalidAction(f"location {l}: order-up-to {action.y[l]} outside [{s_after}, {reach}]")


def local_order_up_to(instance: Instance, l: int, x, s_after: int, u_after: int) -> int:
    target = myopic_base_stock(instance.model, l, x, instance.holding[l], instance.backorder[l])
    return int(min(max(target, s_after), s_after + instance.capacity(l, u_after)))


def movement_cost(instance: Instance, state: SystemState, action: Action) -> Tuple[float, float]:
    transship = sum(instance.transship_charge(l, d) for l, d in enumerate(action.delta_s))
    modules = instance.module_move_cost * sum(abs(a - b) for a, b in zip(state.u, action.u_next)) / 2.0
    return transship, modules


@dataclass
class Scenarios:
    """Per-location one-step outcomes: weights and posterior grid points."""

    weights: np.ndarray
    demands: np.ndarray
    grid_points: List[int]


class PolicyContext:
    """Immutable inputs shared by every decision: instance, grid and value tables.

    Facet sets are extracted lazily per (location, grid point, theta).
    """

    def __init__(self, instance: Instance, grid: BeliefGrid, tables: Sequence[ValueTable]):
        self.instance = instance
        self.grid = grid
        self.tables = list(tables)
        self._facets: Dict[Tuple[int, int, float], FacetSet] = {}

    def facets(self, l: int, gp: int, theta: float) -> FacetSet:
        key = (l, gp, theta)
        if key not in self._facets:
            self._facets[key] = extract_facets(self.tables[l], gp, theta)
        return self._facets[key]

    def scenarios(self, l: int, x: np.ndarray) -> Scenarios:
        model = self.instance.model
        weights = local_demand_pmf(model, l, x)
        grid_points = []
        for n, d in enumerate(model.outcomes):
            if weights[n] <= 0.0:
                grid_points.append(0)
                continue
            grid_points.append(nearest_grid_index(self.grid, local_posterior(model, l, d, x)))
        return Scenarios(weights=weights, demands=model.demand_values, grid_points=grid_points)

    def rollout_cost(self, l: int, sc: Scenarios, y: np.ndarray, u_after: int, theta: float) -> np.ndarray:
        """Expected period cost plus discounted blended future for each level in y."""
        inst = self.instance
        total = np.zeros(y.shape, dtype=float)
        for n, d in enumerate(sc.demands):
            w = sc.weights[n]
            if w <= 0.0:
                continue
            period = inst.holding[l] * np.maximum(y - d, 0) + inst.backorder[l] * np.maximum(d - y, 0)
            future = blended_value(self.tables[l], theta, sc.grid_points[n], y - d, u_after)
            total += w * (period + inst.beta * future)
        return total


def _window_argmin(costs: np.ndarray, start: int, width: int) -> Tuple[int, float]:
    window = costs[start:start + width]
    k = int(np.argmin(window))
    return k, float(window[k])


def rollout_options(ctx: PolicyContext, state: SystemState, theta: float,
                    moves: bool = True) -> List[List[Option]]:
    """Per-location (delta_s, delta_m) options priced by the best order quantity q."""
    inst = ctx.instance
    allow_s, allow_m = flexibility(inst) if moves else (False, False)
    options = []
    for l in range(inst.n_locations):
        sc = ctx.scenarios(l, state.x)
        s_lo, s_hi = transship_bounds(state.s, l) if allow_s else (0, 0)
        m_lo, m_hi = (-state.u[l], inst.module_cap[l] - state.u[l]) if allow_m else (0, 0)
        base = state.s[l] + s_lo
        levels = np.arange(base, state.s[l] + s_hi + inst.max_capacity(l) + 1)
        opts = []
        for dm in range(m_lo, m_hi + 1):
            u_after = state.u[l] + dm
            costs = ctx.rollout_cost(l, sc, levels, u_after, theta)
            width = inst.capacity(l, u_after) + 1
            move = inst.module_move_cost * abs(dm) / 2.0
            for ds in range(s_lo, s_hi + 1):
                q, best = _window_argmin(costs, ds - s_lo, width)
                opts.append(Option(delta_s=ds, delta_m=dm, cost=inst.transship_charge(l, ds) + move + best, q=q))
        options.append(opts)
    return options


def _action_from_selection(state: SystemState, choices: Sequence[Option]) -> Action:
    delta_s = tuple(o.delta_s for o in choices)
    u_next = tuple(u + o.delta_m for u, o in zip(state.u, choices))
    y = tuple(s + o.delta_s + o.q for s, o in zip(state.s, choices))
    return Action(delta_s=delta_s, u_next=u_next, y=y)


def act_MNF(state: SystemState, ctx: PolicyContext) -> Action:
    inst = ctx.instance
    y = tuple(local_order_up_to(inst, l, state.x, state.s[l], state.u[l]) for l in range(inst.n_locations))
    return Action(delta_s=(0,) * inst.n_locations, u_next=tuple(state.u), y=y)


def act_DNF(state: SystemState, ctx: PolicyContext, theta: float) -> Action:
    selection = solve_relocation_dp(rollout_options(ctx, state, theta, moves=False))
    return _action_from_selection(state, selection.choices)


def act_JR(state: SystemState, ctx: PolicyContext, theta: float) -> Action:
    selection = solve_relocation_dp(rollout_options(ctx, state, theta))
    return _action_from_selection(state, selection.choices)


def glr_options(ctx: PolicyContext, state: SystemState, theta: float) -> List[List[Option]]:
    inst = ctx.instance
    allow_s, allow_m = flexibility(inst)
    gp = nearest_grid_index(ctx.grid, state.x)
    options = []
    for l in range(inst.n_locations):
        s_lo, s_hi = transship_bounds(state.s, l) if allow_s else (0, 0)
        m_lo, m_hi = (-state.u[l], inst.module_cap[l] - state.u[l]) if allow_m else (0, 0)
        shifts = np.arange(s_lo, s_hi + 1)
        opts = []
        for dm in range(m_lo, m_hi + 1):
            future = blended_value(ctx.tables[l], theta, gp, state.s[l] + shifts, state.u[l] + dm)
            move = inst.module_move_cost * abs(dm) / 2.0
            for ds, v in zip(shifts.tolist(), np.atleast_1d(future).tolist()):
                opts.append(Option(delta_s=ds, delta_m=dm, cost=inst.transship_charge(l, ds) + move + v))
        options.append(opts)
    return options


def _replenish_locally(ctx: PolicyContext, state: SystemState, delta_s: Sequence[int],
                       u_next: Sequence[int]) -> Action:
    inst = ctx.instance
    y = tuple(local_order_up_to(inst, l, state.x, state.s[l] + delta_s[l], u_next[l])
              for l in range(inst.n_locations))
    return Action(delta_s=tuple(delta_s), u_next=tuple(u_next), y=y)


def act_GLR(state: SystemState, ctx: PolicyContext, theta: float) -> Action:
    selection = solve_relocation_dp(glr_options(ctx, state, theta))
    delta_s = [o.delta_s for o in selection.choices]
    u_next = [u + o.delta_m for u, o in zip(state.u, selection.choices)]
    return _replenish_locally(ctx, state, delta_s, u_next)


@dataclass
class JointProgram:
    problem: MipProblem
    index: Dict[str, int]
    decisions: List[int] = field(default_factory=list)

    def value(self, x: np.ndarray, name: str) -> float:
        return float(x[self.index[name]])


def _relocation_block(b: ProblemBuilder, inst: Instance, state: SystemState) -> List[int]:
    """Shared variables and rows: received/sent inventory, modules after moves, |u - u'|."""
    allow_s, allow_m = flexibility(inst)
    decisions = []
    for l in range(inst.n_locations):
        lo, hi = transship_bounds(state.s, l)
        decisions.append(b.var(f"recv_{l}", 0.0, float(hi if allow_s else 0), inst.transship_in[l], integer=True))
        decisions.append(b.var(f"send_{l}", 0.0, float(-lo if allow_s else 0), inst.transship_out[l], integer=True))
        u_lo, u_hi = (0, inst.module_cap[l]) if allow_m else (state.u[l], state.u[l])
        decisions.append(b.var(f"u_{l}", float(u_lo), float(u_hi), 0.0, integer=True))
        mv = b.var(f"moved_{l}", 0.0, np.inf, inst.module_move_cost / 2.0)
        b.row({mv: 1.0, b.index[f"u_{l}"]: 1.0}, GE, state.u[l], f"moved_lo_{l}")
        b.row({mv: 1.0, b.index[f"u_{l}"]: -1.0}, GE, -state.u[l], f"moved_hi_{l}")
    b.row({b.index[f"u_{l}"]: 1.0 for l in range(inst.n_locations)}, EQ, inst.n_modules, "modules")
    coeffs = {}
    for l in range(inst.n_locations):
        coeffs[b.index[f"recv_{l}"]] = 1.0
        coeffs[b.index[f"send_{l}"]] = -1.0
    b.row(coeffs, EQ, 0.0, "transship_balance")
    return decisions


def _replenishment_block(b: ProblemBuilder, ctx: PolicyContext, state: SystemState) -> List[int]:
    """Order-up-to levels with per-scenario held/backlogged quantities."""
    inst = ctx.instance
    G = inst.module_size
    decisions = []
    for l in range(inst.n_locations):
        lo, hi = transship_bounds(state.s, l)
        y = b.var(f"y_{l}", float(state.s[l] + lo), float(state.s[l] + hi + inst.max_capacity(l)), integer=True)
        decisions.append(y)
        recv, send, u = b.index[f"recv_{l}"], b.index[f"send_{l}"], b.index[f"u_{l}"]
        b.row({y: 1.0, recv: -1.0, send: 1.0}, GE, state.s[l], f"y_lo_{l}")
        b.row({y: 1.0, recv: -1.0, send: 1.0, u: -float(G)}, LE, state.s[l] + inst.fixed_capacity[l], f"y_hi_{l}")
        weights = local_demand_pmf(inst.model, l, state.x)
        for n, d in enumerate(inst.model.outcomes):
            r = b.var(f"held_{l}_{n}", 0.0, np.inf, weights[n] * inst.holding[l])
            o = b.var(f"short_{l}_{n}", 0.0, np.inf, weights[n] * inst.backorder[l])
            b.row({r: 1.0, y: -1.0}, GE, -d, f"held_{l}_{n}")
            b.row({o: 1.0, y: 1.0}, GE, d, f"short_{l}_{n}")
    return decisions


def mp_program(ctx: PolicyContext, state: SystemState) -> JointProgram:
    b = ProblemBuilder()
    decisions = _relocation_block(b, ctx.instance, state)
    decisions += _replenishment_block(b, ctx, state)
    return JointProgram(b.build(), b.index, decisions)


def _facet_rows(b: ProblemBuilder, var: int, arg: Dict[int, float], const: float,
                facets: np.ndarray, name: str) -> None:
    """var >= slope * (arg + const) + intercept for every facet."""
    for k, (slope, intercept) in enumerate(facets):
        coeffs = {var: 1.0}
        for j, a in arg.items():
            coeffs[j] = coeffs.get(j, 0.0) - slope * a
        b.row(coeffs, GE, slope * const + intercept, f"{name}_{k}")


def laj_program(ctx: PolicyContext, state: SystemState, theta: float) -> JointProgram:
    inst = ctx.instance
    b = ProblemBuilder()
    decisions = _relocation_block(b, inst, state)
    decisions += _replenishment_block(b, ctx, state)
    gp = nearest_grid_index(ctx.grid, state.x)
    for l in range(inst.n_locations):
        fs = ctx.facets(l, gp, theta)
        zeta = b.var(f"zeta_{l}", -np.inf, np.inf, inst.beta / 2.0)
        eta = b.var(f"eta_{l}", -np.inf, np.inf, inst.beta / 2.0)
        mean = int(np.floor(expected_demand(inst.model, l, state.x) + 0.5))
        _facet_rows(b, zeta, {b.index[f"y_{l}"]: 1.0}, -mean, fs.gamma_at(state.u[l]), f"zeta_{l}")
        _facet_rows(b, eta, {b.index[f"u_{l}"]: 1.0}, 0.0, fs.theta_at(state.s[l]), f"eta_{l}")
    return JointProgram(b.build(), b.index, decisions)


def laglr_program(ctx: PolicyContext, state: SystemState, theta: float) -> JointProgram:
    inst = ctx.instance
    b = ProblemBuilder()
    decisions = _relocation_block(b, inst, state)
    gp = nearest_grid_index(ctx.grid, state.x)
    for l in range(inst.n_locations):
        fs = ctx.facets(l, gp, theta)
        zeta = b.var(f"zeta_{l}", -np.inf, np.inf, 0.5)
        eta = b.var(f"eta_{l}", -np.inf, np.inf, 0.5)
        _facet_rows(b, zeta, {b.index[f"recv_{l}"]: 1.0, b.index[f"send_{l}"]: -1.0}, state.s[l],
                    fs.gamma_at(state.u[l]), f"zeta_{l}")
        _facet_rows(b, eta, {b.index[f"u_{l}"]: 1.0}, 0.0, fs.theta_at(state.s[l]), f"eta_{l}")
    return JointProgram(b.build(), b.index, decisions)


def _solve_joint(program: JointProgram, relax: bool, label: str) -> np.ndarray:
    if relax:
        solution = solve_lp(program.problem.relaxed()).require_optimal(f"{label} relaxation")
        mask = np.zeros(program.problem.n_vars, dtype=bool)
        mask[program.decisions] = True
        if not is_integral(solution.x, mask):
            fractional = {program.problem.names[j]: float(solution.x[j]) for j in program.decisions
                          if abs(solution.x[j] - round(solution.x[j])) > 1e-6}
            raise Prop2Violation(f"{label}: fractional relaxation {fractional}")
        return solution.x
    # the zero-move action is always feasible
    return solve_mip(program.problem).require_optimal(label).x


def _relocation_from(program: JointProgram, x: np.ndarray, L: int) -> Tuple[List[int], List[int]]:
    delta_s = [int(round(program.value(x, f"recv_{l}") - program.value(x, f"send_{l}"))) for l in range(L)]
    u_next = [int(round(program.value(x, f"u_{l}"))) for l in range(L)]
    return delta_s, u_next


def _joint_action(program: JointProgram, x: np.ndarray, L: int) -> Action:
    delta_s, u_next = _relocation_from(program, x, L)
    y = tuple(int(round(program.value(x, f"y_{l}"))) for l in range(L))
    return Action(delta_s=tuple(delta_s), u_next=tuple(u_next), y=y)


def act_MP(state: SystemState, ctx: PolicyContext) -> Action:
    program = mp_program(ctx, state)
    return _joint_action(program, _solve_joint(program, False, "MP"), ctx.instance.n_locations)


def act_LAJ(state: SystemState, ctx: PolicyContext, theta: float) -> Action:
    program = laj_program(ctx, state, theta)
    relax = ctx.instance.module_size == 1
    return _joint_action(program, _solve_joint(program, relax, "LAJ"), ctx.instance.n_locations)


def act_LAGLR(state: SystemState, ctx: PolicyContext, theta: float) -> Action:
    program = laglr_program(ctx, state, theta)
    delta_s, u_next = _relocation_from(program, _solve_joint(program, True, "LAGLR"), ctx.instance.n_locations)
    return _replenish_locally(ctx, state, delta_s, u_next)


def jr_objective(ctx: PolicyContext, state: SystemState, action: Action, theta: float) -> float:
    """The rollout objective of a complete action, as JR and DNF score it."""
    inst = ctx.instance
    transship, modules = movement_cost(inst, state, action)
    total = transship + modules
    for l in range(inst.n_locations):
        sc = ctx.scenarios(l, state.x)
        total += float(ctx.rollout_cost(l, sc, np.array([action.y[l]]), action.u_next[l], theta)[0])
    return total


def glr_objective(ctx: PolicyContext, state: SystemState, delta_s: Sequence[int],
                  u_next: Sequence[int], theta: float) -> float:
    inst = ctx.instance
    gp = nearest_grid_index(ctx.grid, state.x)
    total = inst.module_move_cost * sum(abs(a - b) for a, b in zip(state.u, u_next)) / 2.0
    for l in range(inst.n_locations):
        total += inst.transship_charge(l, delta_s[l])
        total += float(blended_value(ctx.tables[l], theta, gp, state.s[l] + delta_s[l], u_next[l]))
    return total


def relocations(instance: Instance, state: SystemState) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """Every admissible (delta_s, u_next) pair, in lexicographic order."""
    L = instance.n_locations
    allow_s, allow_m = flexibility(instance)
    s_ranges = [range(lo, hi + 1) if allow_s else range(0, 1)
                for lo, hi in (transship_bounds(state.s, l) for l in range(L))]
    u_ranges = [range(0, instance.module_cap[l] + 1) if allow_m else range(state.u[l], state.u[l] + 1)
                for l in range(L)]
    for delta_s in _product(s_ranges):
        if sum(delta_s) != 0:
            continue
        for u_next in _product(u_ranges):
            if sum(u_next) == instance.n_modules:
                yield delta_s, u_next


def _product(ranges):
    if not ranges:
        yield ()
        return
    for head in ranges[0]:
        for tail in _product(ranges[1:]):
            yield (head,) + tail


def enumerate_actions(instance: Instance, state: SystemState) -> Iterator[Action]:
    for delta_s, u_next in relocations(instance, state):
        y_ranges = [range(state.s[l] + delta_s[l], state.s[l] + delta_s[l] + instance.capacity(l, u_next[l]) + 1)
                    for l in range(instance.n_locations)]
        for y in _product(y_ranges):
            yield Action(delta_s=delta_s, u_next=u_next, y=y)


class Policy:
    """A configured policy bound to its value tables."""

    def __init__(self, config: PolicyConfig, ctx: PolicyContext):
        self.config = config
        self.ctx = ctx

    def act(self, state: SystemState) -> Action:
        check_belief(state.x, self.ctx.instance.model.n_states)
        policy, theta = self.config.policy, self.config.theta
        if policy == PolicyId.MP:
            action = act_MP(state, self.ctx)
        elif policy == PolicyId.MNF:
            action = act_MNF(state, self.ctx)
        elif policy == PolicyId.DNF:
            action = act_DNF(state, self.ctx, theta)
        elif policy == PolicyId.JR:
            action = act_JR(state, self.ctx, theta)
        elif policy == PolicyId.LAJ:
            action = act_LAJ(state, self.ctx, theta)
        elif policy == PolicyId.GLR:
            action = act_GLR(state, self.ctx, theta)
        else:
            action = act_LAGLR(state, self.ctx, theta)
        logger.debug("%s s=%s u=%s -> %s", self.config.label, state.s, state.u, action)
        return action
