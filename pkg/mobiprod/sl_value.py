"""Single-location value tables under the static-belief approximation.

A table holds v(x, s, u) for every belief-grid point x, truncated inventory
level s and module count u at one location.  Outside the truncation window
the value continues with the steepest possible marginal cost (b/(1-beta)
below, h/(1-beta) above), which keeps every iterate convex in s.
"""
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .instances import Instance
from .modulation import BeliefGrid, ModulationModel, local_demand_pmf
from .shared.config import settings
from .shared.errors import ConvergenceFailure, InvalidModel, NonConvexTable

logger = logging.getLogger(__name__)

TABLE_SCHEMA = "mobiprod-table/1"
FACET_TOL = 1e-6
ARGMIN_TOL = 1e-9


def stopping_tolerance(beta: float) -> float:
    if beta == 0.0:
        return 1e-6
    return 1e-6 * (1.0 - beta) / (2.0 * beta)


@dataclass(frozen=True)
class ValueTable:
    location: int
    grid: BeliefGrid
    s_min: int
    s_max: int
    values: np.ndarray
    base_stock: np.ndarray
    low_slope: float
    high_slope: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def n_s(self) -> int:
        return self.s_max - self.s_min + 1

    @property
    def u_max(self) -> int:
        return self.values.shape[2] - 1

    @property
    def s_levels(self) -> np.ndarray:
        return np.arange(self.s_min, self.s_max + 1)

    def lookup(self, gp: int, s, u: int):
        """Table value at (gp, s, u); s may be a scalar or an integer array."""
        if not 0 <= u <= self.u_max:
            raise InvalidModel(f"module count {u} outside [0, {self.u_max}]")
        s_arr = np.asarray(s, dtype=np.int64)
        column = self.values[gp, :, u]
        idx = np.clip(s_arr - self.s_min, 0, self.n_s - 1)
        out = column[idx]
        below = np.maximum(self.s_min - s_arr, 0)
        above = np.maximum(s_arr - self.s_max, 0)
        out = out + below * self.low_slope + above * self.high_slope
        return float(out) if out.ndim == 0 else out

    def blended(self, gp: int, s, u: int, theta: float):
        return blended_value(self, theta, gp, s, u)


@dataclass(frozen=True)
class FacetSet:
    """Facets (slope, intercept) of the blended table at one grid point.

    ``gamma[u]`` describes the table over s with u held fixed and
    ``theta_facets[i]`` describes it over u at inventory ``s_min + i``.
    """

    location: int
    gp: int
    theta: float
    s_min: int
    gamma: Tuple[np.ndarray, ...] = field(repr=False)
    theta_facets: Tuple[np.ndarray, ...] = field(repr=False)

    def gamma_at(self, u: int) -> np.ndarray:
        return self.gamma[u]

    def theta_at(self, s: int) -> np.ndarray:
        i = min(max(s - self.s_min, 0), len(self.theta_facets) - 1)
        return self.theta_facets[i]


def _single_period_costs(instance: Instance, l: int, levels: np.ndarray) -> np.ndarray:
    d = instance.model.demand_values[None, :]
    y = levels[:, None]
    return instance.holding[l] * np.maximum(y - d, 0) + instance.backorder[l] * np.maximum(d - y, 0)


def _grid_pmfs(model: ModulationModel, l: int, grid: BeliefGrid) -> np.ndarray:
    return np.vstack([local_demand_pmf(model, l, x) for x in grid.array])


def iterate_static_values(instance: Instance, l: int, grid: BeliefGrid,
                          s_range: Optional[Tuple[int, int]] = None
                          ) -> Iterator[Tuple[np.ndarray, np.ndarray, float]]:
    """Successive approximations from v0 = 0; yields (values, base_stock, residual) per sweep."""
    s_min, s_max = s_range or instance.default_s_range(l)
    if s_min > s_max:
        raise InvalidModel(f"empty inventory range [{s_min}, {s_max}]")
    beta = instance.beta
    model = instance.model
    n_gp = len(grid)
    n_s = s_max - s_min + 1
    n_u = instance.module_cap[l] + 1
    caps = [instance.capacity(l, u) for u in range(n_u)]
    c_max = max(caps)
    d_max = model.d_max
    n_y = n_s + c_max
    n_z = d_max + n_s + c_max
    low_slope = instance.backorder[l] / (1.0 - beta)
    high_slope = instance.holding[l] / (1.0 - beta)

    pmf = _grid_pmfs(model, l, grid)
    y_levels = np.arange(s_min, s_min + n_y)
    expected_cost = pmf @ _single_period_costs(instance, l, y_levels).T
    shifts = [d_max - int(d) for d in model.demand_values]
    below = np.arange(d_max, 0, -1)[None, :, None] * low_slope
    above = np.arange(1, c_max + 1)[None, :, None] * high_slope

    v = np.zeros((n_gp, n_s, n_u))
    while True:
        v_ext = np.concatenate(
            [v[:, :1, :] + below, v, v[:, -1:, :] + above], axis=1)
        assert v_ext.shape[1] == n_z
        G = np.repeat(expected_cost[:, :, None], n_u, axis=2)
        if beta > 0.0:
            for n, shift in enumerate(shifts):
                G += beta * pmf[:, n, None, None] * v_ext[:, shift:shift + n_y, :]
        v_new = np.empty_like(v)
        for u, cap in enumerate(caps):
            window = sliding_window_view(G[:, :, u], cap + 1, axis=1)[:, :n_s, :]
            v_new[:, :, u] = window.min(axis=2)
        g_min = G.min(axis=1, keepdims=True)
        base_stock = s_min + np.argmax(G <= g_min + ARGMIN_TOL, axis=1)
        residual = float(np.abs(v_new - v).max())
        v = v_new
        yield v, base_stock, residual


def static_value_iteration(instance: Instance, l: int, grid: BeliefGrid,
                           s_range: Optional[Tuple[int, int]] = None,
                           horizon: Optional[int] = None,
                           max_iters: Optional[int] = None) -> ValueTable:
    """Value table of the static-belief single-location problem.

    With ``horizon`` set, exactly that many sweeps are applied (the n-step
    table) and convergence is not checked.
    """
    s_min, s_max = s_range or instance.default_s_range(l)
    max_iters = max_iters or settings.max_vi_iters
    eps = stopping_tolerance(instance.beta)
    started = time.perf_counter()
    values = np.zeros((len(grid), s_max - s_min + 1, instance.module_cap[l] + 1))
    base_stock = None
    residual = float("inf")
    iterations = 0
    sweeps = iterate_static_values(instance, l, grid, (s_min, s_max))
    if horizon is not None and horizon == 0:
        _, base_stock, _ = next(sweeps)
        residual = 0.0
    else:
        for values, base_stock, residual in sweeps:
            iterations += 1
            if horizon is not None:
                if iterations >= horizon:
                    break
            elif residual <= eps:
                break
            elif iterations >= max_iters:
                raise ConvergenceFailure(
                    f"value iteration for location {l} did not converge in {max_iters} sweeps", residual)
    logger.info("value table l=%d: %d sweeps, residual %.2e, %.2fs",
                l, iterations, residual, time.perf_counter() - started)
    return ValueTable(
        location=l, grid=grid, s_min=s_min, s_max=s_max,
        values=values, base_stock=base_stock.astype(np.int64),
        low_slope=instance.backorder[l] / (1.0 - instance.beta),
        high_slope=instance.holding[l] / (1.0 - instance.beta),
        iterations=iterations, residual=residual,
    )


def build_value_tables(instance: Instance, grid: BeliefGrid,
                       horizon: Optional[int] = None) -> List[ValueTable]:
    return [static_value_iteration(instance, l, grid, horizon=horizon)
            for l in range(instance.n_locations)]


def blended_value(table: ValueTable, theta: float, gp: int, s, u: int):
    """(1 - theta) * v(gp, s, Y') + theta * v(gp, s, u)."""
    if not 0.0 <= theta <= 1.0:
        raise InvalidModel(f"blend coefficient {theta} outside [0, 1]")
    full = table.lookup(gp, s, table.u_max)
    if theta == 0.0:
        return full
    return (1.0 - theta) * full + theta * table.lookup(gp, s, u)


def myopic_base_stock(model: ModulationModel, l: int, x, holding: float, backorder: float) -> int:
    """Smallest outcome whose one-step-ahead cdf reaches b/(b+h)."""
    if holding + backorder <= 0.0:
        return int(min(model.outcomes))
    fractile = backorder / (backorder + holding)
    pmf = local_demand_pmf(model, l, np.asarray(x, dtype=float))
    order = np.argsort(model.demand_values, kind="stable")
    cdf = np.cumsum(pmf[order])
    hit = np.flatnonzero(cdf >= fractile - 1e-12)
    return int(model.demand_values[order][hit[0] if hit.size else -1])


def lower_hull_facets(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Monotone-chain lower hull of (xs, ys) as rows (slope, intercept), xs ascending."""
    if xs.size == 1:
        return np.array([[0.0, float(ys[0])]])
    hull: List[int] = []
    for i in range(xs.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a])
            if cross <= 1e-10:
                hull.pop()
            else:
                break
        hull.append(i)
    a, b = np.asarray(hull[:-1]), np.asarray(hull[1:])
    slopes = (ys[b] - ys[a]) / (xs[b] - xs[a])
    intercepts = ys[a] - slopes * xs[a]
    return np.column_stack([slopes, intercepts])


def _check_facets(facets: np.ndarray, xs: np.ndarray, ys: np.ndarray, what: str) -> None:
    rebuilt = (facets[:, 0][None, :] * xs[:, None] + facets[:, 1][None, :]).max(axis=1)
    err = float(np.abs(rebuilt - ys).max())
    if err > FACET_TOL:
        raise NonConvexTable(f"{what}: facet reconstruction error {err:.2e}")


def extract_facets(table: ValueTable, gp: int, theta: float = 1.0) -> FacetSet:
    blended = np.stack([blended_value(table, theta, gp, table.s_levels, u)
                        for u in range(table.u_max + 1)], axis=1)
    s_levels = table.s_levels.astype(float)
    u_levels = np.arange(table.u_max + 1, dtype=float)
    gamma = []
    for u in range(table.u_max + 1):
        facets = lower_hull_facets(s_levels, blended[:, u])
        _check_facets(facets, s_levels, blended[:, u], f"location {table.location} u={u}")
        gamma.append(facets)
    theta_facets = []
    for i in range(table.n_s):
        facets = lower_hull_facets(u_levels, blended[i, :])
        _check_facets(facets, u_levels, blended[i, :], f"location {table.location} s={table.s_min + i}")
        theta_facets.append(facets)
    return FacetSet(location=table.location, gp=gp, theta=theta, s_min=table.s_min,
                    gamma=tuple(gamma), theta_facets=tuple(theta_facets))


def bound_gap_rho(instance: Instance, l: int, x, s: int, u: int) -> float:
    """rho/(1-beta): how far the true value can sit below the static-belief table.

    ``x`` does not enter; the spread k(d) is belief-free.
    """
    O = instance.model.O[l]
    spread = O.max(axis=0) - O.min(axis=0)
    endpoints = (s, s + instance.capacity(l, u))
    rho = max(
        sum(spread[n] * instance.period_cost(l, y, int(d))
            for n, d in enumerate(instance.model.outcomes))
        for y in endpoints
    )
    return float(rho) / (1.0 - instance.beta)


def table_to_bytes(table: ValueTable) -> bytes:
    buffer = io.BytesIO()
    np.savez(
        buffer,
        schema=np.array(TABLE_SCHEMA),
        location=np.array(table.location),
        grid_points=table.grid.array,
        grid_denominator=np.array(table.grid.denominator),
        stationary_index=np.array(-1 if table.grid.stationary_index is None else table.grid.stationary_index),
        s_range=np.array([table.s_min, table.s_max]),
        values=table.values,
        base_stock=table.base_stock,
        slopes=np.array([table.low_slope, table.high_slope]),
        stats=np.array([table.iterations, table.residual]),
    )
    return buffer.getvalue()


def table_from_bytes(payload: bytes) -> ValueTable:
    with np.load(io.BytesIO(payload), allow_pickle=False) as data:
        if str(data["schema"]) != TABLE_SCHEMA:
            raise InvalidModel(f"unsupported table schema {data['schema']}")
        stationary = int(data["stationary_index"])
        grid = BeliefGrid(points=tuple(tuple(float(c) for c in p) for p in data["grid_points"]),
                          denominator=int(data["grid_denominator"]),
                          stationary_index=None if stationary < 0 else stationary)
        s_min, s_max = (int(v) for v in data["s_range"])
        low, high = (float(v) for v in data["slopes"])
        iterations, residual = data["stats"]
        return ValueTable(location=int(data["location"]), grid=grid, s_min=s_min, s_max=s_max,
                          values=data["values"].copy(), base_stock=data["base_stock"].copy(),
                          low_slope=low, high_slope=high,
                          iterations=int(iterations), residual=float(residual))


def check_structure(table: ValueTable, tol: float = 1e-7) -> List[str]:
    """Names of the structural properties the table violates (empty when sound)."""
    v = table.values
    problems = []
    if v.shape[1] >= 3 and (np.diff(v, n=2, axis=1) < -tol).any():
        problems.append("convexity in inventory")
    if v.shape[2] >= 2 and (np.diff(v, axis=2) > tol).any():
        problems.append("capacity monotonicity")
    if v.shape[2] >= 3 and (np.diff(v, n=2, axis=2) < -tol).any():
        problems.append("convexity in capacity")
    if table.base_stock.shape[1] >= 2 and (np.diff(table.base_stock, axis=1) > 0).any():
        problems.append("base-stock monotonicity")
    if (v < -tol).any():
        problems.append("nonnegativity")
    return problems


def sweep_is_monotone(previous: np.ndarray, current: np.ndarray, tol: float = 1e-9) -> bool:
    return bool((current >= previous - tol).all())
