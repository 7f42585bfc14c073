"""Exact solvers for the one-epoch programs.

* ``solve_lp``: dense two-phase tableau simplex with Bland's rule.
* ``solve_mip``: best-first branch and bound over ``solve_lp``.
* ``solve_relocation_dp``: dynamic program over locations for selection
  programs with the two coupling sums (inventory and modules) fixed at zero.
"""
import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .shared.config import settings
from .shared.errors import BudgetExceeded, ConvergenceFailure, InfeasibleProblem, InvalidModel, UnboundedProblem
from .shared.models import SolveStatus

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
INT_TOL = 1e-6
MAX_PIVOTS = 100_000

LE, EQ, GE = "<=", "=", ">="


@dataclass
class MipProblem:
    """min c'x + constant  s.t.  A x (senses) b,  lb <= x <= ub,  x_j integer where flagged."""

    c: np.ndarray
    A: np.ndarray
    senses: List[str]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    names: List[str] = field(default_factory=list)
    row_names: List[str] = field(default_factory=list)
    constant: float = 0.0

    def __post_init__(self):
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        if len(self.senses) != m or self.b.shape[0] != m:
            raise InvalidModel("constraint rows, senses and right-hand sides disagree")
        if any(s not in (LE, EQ, GE) for s in self.senses):
            raise InvalidModel(f"unknown constraint sense in {set(self.senses)}")
        if self.lb.shape[0] != n or self.ub.shape[0] != n or self.integer.shape[0] != n:
            raise InvalidModel("bounds and integrality mask must have one entry per variable")
        boxed = np.isfinite(self.lb) & np.isfinite(self.ub)
        if (self.integer & ~boxed).any():
            raise InvalidModel("integer variables need finite bounds")
        if not self.names:
            self.names = [f"x{j}" for j in range(n)]
        if not self.row_names:
            self.row_names = [f"c{i}" for i in range(m)]

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.constant

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "MipProblem":
        return MipProblem(c=self.c, A=self.A, senses=self.senses, b=self.b, lb=lb, ub=ub,
                          integer=self.integer, names=self.names, row_names=self.row_names,
                          constant=self.constant)

    def relaxed(self) -> "MipProblem":
        return MipProblem(c=self.c, A=self.A, senses=self.senses, b=self.b, lb=self.lb, ub=self.ub,
                          integer=np.zeros_like(self.integer), names=self.names,
                          row_names=self.row_names, constant=self.constant)


@dataclass
class Solution:
    x: Optional[np.ndarray]
    objective: float
    status: SolveStatus
    nodes: int = 0
    root_bound: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    def require_optimal(self, label: str) -> "Solution":
        """Raise the matching SolverError unless the solve ended optimal."""
        if self.status == SolveStatus.UNBOUNDED:
            raise UnboundedProblem(f"{label}: program is unbounded")
        if not self.optimal:
            raise InfeasibleProblem(f"{label}: program is {self.status.value}")
        return self


class ProblemBuilder:
    """Assemble a MipProblem from named variables and sparse rows."""

    def __init__(self):
        self.index: Dict[str, int] = {}
        self._c: List[float] = []
        self._lb: List[float] = []
        self._ub: List[float] = []
        self._int: List[bool] = []
        self._rows: List[Tuple[Dict[int, float], str, float, str]] = []
        self.constant = 0.0

    def var(self, name: str, lb: float = 0.0, ub: float = np.inf, cost: float = 0.0,
            integer: bool = False) -> int:
        if name in self.index:
            raise InvalidModel(f"duplicate variable {name}")
        self.index[name] = len(self._c)
        self._c.append(cost)
        self._lb.append(lb)
        self._ub.append(ub)
        self._int.append(integer)
        return self.index[name]

    def row(self, coeffs: Dict[int, float], sense: str, rhs: float, name: str = "") -> None:
        self._rows.append((dict(coeffs), sense, float(rhs), name or f"c{len(self._rows)}"))

    def build(self) -> MipProblem:
        n = len(self._c)
        A = np.zeros((len(self._rows), n))
        for i, (coeffs, _, _, _) in enumerate(self._rows):
            for j, a in coeffs.items():
                A[i, j] += a
        names = [None] * n
        for name, j in self.index.items():
            names[j] = name
        return MipProblem(
            c=np.asarray(self._c, dtype=float), A=A,
            senses=[r[1] for r in self._rows], b=np.asarray([r[2] for r in self._rows], dtype=float),
            lb=np.asarray(self._lb, dtype=float), ub=np.asarray(self._ub, dtype=float),
            integer=np.asarray(self._int, dtype=bool), names=names,
            row_names=[r[3] for r in self._rows], constant=self.constant,
        )


def _pivot(T: np.ndarray, r: int, col: int) -> None:
    T[r] /= T[r, col]
    factors = T[:, col].copy()
    factors[r] = 0.0
    T -= np.outer(factors, T[r])


def _run_simplex(T: np.ndarray, basis: List[int], allowed: int) -> SolveStatus:
    """Minimize the last row of T over columns < allowed; Bland's rule throughout."""
    m = len(basis)
    for _ in range(MAX_PIVOTS):
        reduced = T[m, :allowed]
        entering = np.flatnonzero(reduced < -OPT_TOL)
        if entering.size == 0:
            return SolveStatus.OPTIMAL
        col = int(entering[0])
        column = T[:m, col]
        candidates = np.flatnonzero(column > FEAS_TOL)
        if candidates.size == 0:
            return SolveStatus.UNBOUNDED
        ratios = T[candidates, -1] / column[candidates]
        best = ratios.min()
        ties = candidates[ratios <= best + FEAS_TOL * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, col)
        basis[r] = col
    raise ConvergenceFailure("simplex pivot limit reached", float("nan"))


def _standard_form(problem: MipProblem):
    """Map x = offset + M z with z >= 0; finite upper bounds become rows."""
    n = problem.n_vars
    cols = []
    offset = np.zeros(n)
    bound_rows = []
    for j in range(n):
        lo, hi = problem.lb[j], problem.ub[j]
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    M = np.zeros((n, len(cols)))
    for k, (j, sign) in enumerate(cols):
        M[j, k] = sign
    A = problem.A @ M
    b = problem.b - problem.A @ offset
    senses = list(problem.senses)
    if bound_rows:
        extra = np.zeros((len(bound_rows), len(cols)))
        for i, (k, width) in enumerate(bound_rows):
            extra[i, k] = 1.0
        A = np.vstack([A, extra])
        b = np.concatenate([b, [w for _, w in bound_rows]])
        senses += [LE] * len(bound_rows)
    return A, b, senses, M, offset


def solve_lp(problem: MipProblem) -> Solution:
    """Optimal basic solution of the continuous relaxation."""
    if (problem.lb > problem.ub + FEAS_TOL).any():
        return Solution(None, float("inf"), SolveStatus.INFEASIBLE)
    A, b, senses, M, offset = _standard_form(problem)
    m, n_z = A.shape
    c_z = M.T @ problem.c
    constant = problem.constant + float(problem.c @ offset)

    n_slack = sum(1 for s in senses if s != EQ)
    A_full = np.zeros((m, n_z + n_slack))
    A_full[:, :n_z] = A
    b_full = b.copy()
    slack_of_row: Dict[int, int] = {}
    k = n_z
    for i, s in enumerate(senses):
        if s == LE:
            A_full[i, k] = 1.0
            slack_of_row[i] = k
            k += 1
        elif s == GE:
            A_full[i, k] = -1.0
            slack_of_row[i] = k
            k += 1
    negative = b_full < 0
    A_full[negative] *= -1.0
    b_full[negative] *= -1.0

    basis: List[int] = []
    artificial_rows = []
    for i in range(m):
        j = slack_of_row.get(i)
        if j is not None and A_full[i, j] > 0:
            basis.append(j)
        else:
            basis.append(-1)
            artificial_rows.append(i)
    n_real = A_full.shape[1]
    n_art = len(artificial_rows)
    T = np.zeros((m + 1, n_real + n_art + 1))
    T[:m, :n_real] = A_full
    T[:m, -1] = b_full
    for a, i in enumerate(artificial_rows):
        T[i, n_real + a] = 1.0
        basis[i] = n_real + a
        # phase-one objective: sum of artificials, priced out against the basis
        T[m] -= T[i]
    for a in range(n_art):
        T[m, n_real + a] = 0.0

    if n_art:
        status = _run_simplex(T, basis, n_real + n_art)
        if status != SolveStatus.OPTIMAL or -T[m, -1] > FEAS_TOL * max(1.0, float(np.abs(b_full).max())) * 10:
            return Solution(None, float("inf"), SolveStatus.INFEASIBLE)
        keep = []
        for i in range(m):
            if basis[i] >= n_real:
                row = T[i, :n_real]
                nz = np.flatnonzero(np.abs(row) > FEAS_TOL)
                if nz.size:
                    _pivot(T, i, int(nz[0]))
                    basis[i] = int(nz[0])
                    keep.append(i)
                # a row with no real coefficient left is redundant
            else:
                keep.append(i)
        T = np.vstack([T[keep][:, list(range(n_real)) + [T.shape[1] - 1]],
                       np.zeros((1, n_real + 1))])
        basis = [basis[i] for i in keep]
        m = len(keep)
    else:
        T = np.delete(T, np.s_[n_real:n_real + n_art], axis=1)

    cost = np.zeros(n_real)
    cost[:n_z] = c_z
    T[m, :n_real] = cost
    T[m, -1] = 0.0
    for i, j in enumerate(basis):
        if cost[j] != 0.0:
            T[m] -= cost[j] * T[i]
    status = _run_simplex(T, basis, n_real)
    if status == SolveStatus.UNBOUNDED:
        return Solution(None, float("-inf"), SolveStatus.UNBOUNDED)
    z = np.zeros(n_real)
    for i, j in enumerate(basis):
        z[j] = T[i, -1]
    x = offset + M @ z[:n_z]
    objective = float(problem.c @ x) + problem.constant
    return Solution(x=x, objective=objective, status=SolveStatus.OPTIMAL, nodes=1,
                    root_bound=objective)


def _most_fractional(x: np.ndarray, integer: np.ndarray) -> Optional[int]:
    frac = np.abs(x - np.round(x))
    frac[~integer] = 0.0
    if frac.max() <= INT_TOL:
        return None
    # distance to one half; argmin returns the lowest index among ties
    closeness = np.where(frac > INT_TOL, np.abs((x - np.floor(x)) - 0.5), np.inf)
    return int(np.argmin(np.round(closeness, 12)))


def solve_mip(problem: MipProblem, node_budget: Optional[int] = None) -> Solution:
    """Provably optimal integer solution by best-first branch and bound."""
    node_budget = node_budget or settings.mip_node_budget
    root = solve_lp(problem)
    if not root.optimal:
        return Solution(None, root.objective, root.status, nodes=1)
    incumbent: Optional[np.ndarray] = None
    best = float("inf")
    counter = 0
    heap = [(root.objective, counter, problem.lb.copy(), problem.ub.copy(), root)]
    nodes = 0
    while heap:
        bound, _, lb, ub, relaxation = heapq.heappop(heap)
        if bound >= best - OPT_TOL:
            continue
        nodes += 1
        if nodes > node_budget:
            raise BudgetExceeded(f"branch and bound exceeded {node_budget} nodes",
                                 incumbent=None if incumbent is None else Solution(
                                     incumbent, best, SolveStatus.OPTIMAL, nodes, root.objective))
        x = relaxation.x
        j = _most_fractional(x, problem.integer)
        if j is None:
            candidate = x.copy()
            candidate[problem.integer] = np.round(candidate[problem.integer])
            value = problem.objective(candidate)
            if value < best - OPT_TOL:
                best, incumbent = value, candidate
            continue
        for lo, hi in ((lb[j], np.floor(x[j])), (np.ceil(x[j]), ub[j])):
            if lo > hi:
                continue
            child_lb, child_ub = lb.copy(), ub.copy()
            child_lb[j], child_ub[j] = lo, hi
            child = solve_lp(problem.with_bounds(child_lb, child_ub))
            if child.optimal and child.objective < best - OPT_TOL:
                counter += 1
                heapq.heappush(heap, (child.objective, counter, child_lb, child_ub, child))
    if incumbent is None:
        return Solution(None, float("inf"), SolveStatus.INFEASIBLE, nodes=nodes, root_bound=root.objective)
    logger.debug("branch and bound: %d nodes, objective %.6f", nodes, best)
    return Solution(incumbent, best, SolveStatus.OPTIMAL, nodes=max(nodes, 1), root_bound=root.objective)


def is_integral(x: np.ndarray, mask: np.ndarray, tol: float = INT_TOL) -> bool:
    return bool((np.abs(x[mask] - np.round(x[mask])) <= tol).all())


@dataclass(frozen=True)
class Option:
    """One per-location choice of a relocation program."""

    delta_s: int
    delta_m: int
    cost: float
    q: int = 0


OptionTable = List[List[Option]]


@dataclass(frozen=True)
class RelocationSelection:
    choices: Tuple[Option, ...]
    cost: float


def _window(arr: np.ndarray, shape: Tuple[int, int], a: int, b: int) -> np.ndarray:
    """out[i, j] = arr[i + a, j + b] for an output of the given shape, inf where that index falls outside."""
    out = np.full(shape, np.inf)
    n0, n1 = arr.shape
    i0, i1 = max(0, -a), min(shape[0], n0 - a)
    j0, j1 = max(0, -b), min(shape[1], n1 - b)
    if i0 < i1 and j0 < j1:
        out[i0:i1, j0:j1] = arr[i0 + a:i1 + a, j0 + b:j1 + b]
    return out


Range = Tuple[int, int]


def stage_ranges(options: OptionTable) -> List[Tuple[Range, Range]]:
    """Cumulative (inventory, module) move sums worth keeping before each location.

    Entry l bounds the sums over locations < l: reachable from the prefix and
    still able to return to zero with the moves of locations >= l.  Entry L
    is the single point (0, 0).
    """
    L = len(options)
    lo_s = [min(o.delta_s for o in opts) for opts in options]
    hi_s = [max(o.delta_s for o in opts) for opts in options]
    lo_m = [min(o.delta_m for o in opts) for opts in options]
    hi_m = [max(o.delta_m for o in opts) for opts in options]
    ranges = []
    for l in range(L + 1):
        s = (max(sum(lo_s[:l]), -sum(hi_s[l:])), min(sum(hi_s[:l]), -sum(lo_s[l:])))
        m = (max(sum(lo_m[:l]), -sum(hi_m[l:])), min(sum(hi_m[:l]), -sum(lo_m[l:])))
        ranges.append((s, m))
    return ranges


def solve_relocation_dp(options: OptionTable) -> RelocationSelection:
    """Cheapest one-option-per-location selection with both move sums equal to zero.

    Cost-to-go is computed backward over locations on a (cumulative inventory
    move, cumulative module move) lattice bounded per stage by
    ``stage_ranges``; the forward pass takes, location by location, the first
    optimal option in (delta_s, delta_m, q) order.
    """
    if any(not opts for opts in options):
        raise InfeasibleProblem("a location has no admissible option")
    ordered = [sorted(opts, key=lambda o: (o.delta_s, o.delta_m, o.q)) for opts in options]
    ranges = stage_ranges(ordered)
    if any(lo > hi for stage in ranges for lo, hi in stage):
        raise InfeasibleProblem("move ranges cannot balance to zero")
    shapes = [(s[1] - s[0] + 1, m[1] - m[0] + 1) for s, m in ranges]

    to_go = [np.zeros(shapes[-1])]
    for l in range(len(ordered) - 1, -1, -1):
        (s_here, m_here), (s_next, m_next) = ranges[l], ranges[l + 1]
        current = np.full(shapes[l], np.inf)
        for o in ordered[l]:
            shifted = _window(to_go[-1], shapes[l], s_here[0] + o.delta_s - s_next[0],
                              m_here[0] + o.delta_m - m_next[0])
            np.minimum(current, shifted + o.cost, out=current)
        to_go.append(current)
    to_go.reverse()

    total = float(to_go[0][0, 0])
    if not np.isfinite(total):
        raise InfeasibleProblem("no selection balances inventory and module moves")
    cum_s, cum_m = 0, 0
    chosen = []
    for l, opts in enumerate(ordered):
        (s_here, m_here), (s_next, m_next) = ranges[l], ranges[l + 1]
        target = to_go[l][cum_s - s_here[0], cum_m - m_here[0]]
        for o in opts:
            i, j = cum_s + o.delta_s - s_next[0], cum_m + o.delta_m - m_next[0]
            if not (0 <= i < shapes[l + 1][0] and 0 <= j < shapes[l + 1][1]):
                continue
            if o.cost + to_go[l + 1][i, j] <= target + 1e-9 * max(1.0, abs(target)):
                chosen.append(o)
                cum_s, cum_m = cum_s + o.delta_s, cum_m + o.delta_m
                break
    return RelocationSelection(choices=tuple(chosen), cost=float(sum(o.cost for o in chosen)))


def relocation_problem(options: OptionTable) -> Tuple[MipProblem, List[Tuple[int, int]]]:
    """The same selection written as a 0/1 program; also returns (location, option) per column."""
    builder = ProblemBuilder()
    columns = []
    for l, opts in enumerate(options):
        for k, o in enumerate(opts):
            builder.var(f"w_{l}_{k}", 0.0, 1.0, o.cost, integer=True)
            columns.append((l, k))
    for l, opts in enumerate(options):
        builder.row({builder.index[f"w_{l}_{k}"]: 1.0 for k in range(len(opts))}, EQ, 1.0, f"pick_{l}")
    builder.row({builder.index[f"w_{l}_{k}"]: float(options[l][k].delta_s) for l, k in columns},
                EQ, 0.0, "inventory_balance")
    builder.row({builder.index[f"w_{l}_{k}"]: float(options[l][k].delta_m) for l, k in columns},
                EQ, 0.0, "module_balance")
    return builder.build(), columns


def _lp_term(coef: float, name: str, first: bool) -> str:
    sign = "-" if coef < 0 else ("" if first else "+")
    return f"{sign} {abs(coef):.12g} {name}".strip()


def format_lp(problem: MipProblem) -> str:
    """The problem in CPLEX LP text format."""
    lines = ["\\ mobiprod", "Minimize"]
    terms = [_lp_term(a, problem.names[j], not k)
             for k, (j, a) in enumerate((j, a) for j, a in enumerate(problem.c) if a != 0.0)]
    if problem.constant:
        terms.append(_lp_term(problem.constant, "", not terms))
    lines.append(" obj: " + (" ".join(terms) if terms else "0 " + problem.names[0]))
    lines.append("Subject To")
    for i in range(problem.n_rows):
        nz = [(j, a) for j, a in enumerate(problem.A[i]) if a != 0.0]
        body = " ".join(_lp_term(a, problem.names[j], not k) for k, (j, a) in enumerate(nz)) or "0 " + problem.names[0]
        lines.append(f" {problem.row_names[i]}: {body} {problem.senses[i]} {problem.b[i]:.12g}")
    lines.append("Bounds")
    for j, name in enumerate(problem.names):
        lo, hi = problem.lb[j], problem.ub[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" {name} free")
        else:
            lo_s = f"{lo:.12g}" if np.isfinite(lo) else "-inf"
            hi_s = f"{hi:.12g}" if np.isfinite(hi) else "+inf"
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
    generals = [problem.names[j] for j in np.flatnonzero(problem.integer)]
    if generals:
        lines.append("Generals")
        lines.append(" " + " ".join(generals))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(problem: MipProblem, path: Union[str, Path]) -> None:
    Path(path).write_text(format_lp(problem), encoding="utf-8")
