"""Modulation chain, demand likelihoods and belief-state algebra."""
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from math import comb
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .shared.errors import InvalidModel, NoStationaryDistribution, ZeroLikelihood

logger = logging.getLogger(__name__)

PMF_TOL = 1e-12
GRID_TOL = 1e-9

Belief = np.ndarray


class ModulationModel(BaseModel):
    """Markov chain P plus per-location demand pmfs O[l][j][n] over shared outcomes.

    Demand is product-form across locations given the modulation state.  The
    optional AOD channel holds a pmf over symbols per state.
    """

    model_config = ConfigDict(frozen=True)

    transition: List[List[float]]
    outcomes: List[int]
    demand_pmf: List[List[List[float]]]
    aod_pmf: Optional[List[List[float]]] = None

    @field_validator("outcomes")
    @classmethod
    def validate_outcomes(cls, v):
        if len(v) < 1:
            raise InvalidModel("at least one demand outcome is required")
        if any(d < 0 for d in v) or len(set(v)) != len(v):
            raise InvalidModel("demand outcomes must be distinct nonnegative integers")
        return v

    @model_validator(mode="after")
    def validate_shapes(self):
        P = np.asarray(self.transition, dtype=float)
        n = P.shape[0]
        if P.ndim != 2 or P.shape != (n, n) or n < 1:
            raise InvalidModel("transition matrix must be square")
        if (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max() > PMF_TOL:
            raise InvalidModel("transition matrix must be row-stochastic")
        O = np.asarray(self.demand_pmf, dtype=float)
        if O.ndim != 3 or O.shape[1] != n or O.shape[2] != len(self.outcomes):
            raise InvalidModel(
                f"demand_pmf must be L x {n} x {len(self.outcomes)}, got {O.shape}")
        if (O < 0).any() or np.abs(O.sum(axis=2) - 1.0).max() > PMF_TOL:
            raise InvalidModel("every demand pmf must sum to one")
        if self.aod_pmf is not None:
            Z = np.asarray(self.aod_pmf, dtype=float)
            if Z.ndim != 2 or Z.shape[0] != n:
                raise InvalidModel("aod_pmf must have one row per modulation state")
            if (Z < 0).any() or np.abs(Z.sum(axis=1) - 1.0).max() > PMF_TOL:
                raise InvalidModel("every AOD pmf must sum to one")
        return self

    @cached_property
    def P(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    @cached_property
    def O(self) -> np.ndarray:
        return np.asarray(self.demand_pmf, dtype=float)

    @cached_property
    def Z(self) -> Optional[np.ndarray]:
        return None if self.aod_pmf is None else np.asarray(self.aod_pmf, dtype=float)

    @cached_property
    def demand_values(self) -> np.ndarray:
        return np.asarray(self.outcomes, dtype=np.int64)

    @property
    def n_states(self) -> int:
        return len(self.transition)

    @property
    def n_locations(self) -> int:
        return len(self.demand_pmf)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    @property
    def d_max(self) -> int:
        return int(max(self.outcomes))

    def outcome_index(self, d: int) -> int:
        try:
            return self.outcomes.index(int(d))
        except ValueError:
            raise InvalidModel(f"demand {d} is outside the outcome support {self.outcomes}")


@dataclass(frozen=True)
class StationaryDistribution:
    pi: Belief
    unique: bool


@dataclass(frozen=True)
class BeliefGrid:
    points: Tuple[Tuple[float, ...], ...]
    denominator: int
    stationary_index: Optional[int] = None

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def __len__(self) -> int:
        return len(self.points)

    def point(self, index: int) -> Belief:
        return self.array[index]


def check_belief(x: Sequence[float], n_states: Optional[int] = None) -> Belief:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or (n_states is not None and x.shape[0] != n_states):
        raise InvalidModel(f"belief must be a length-{n_states} vector")
    if (x < -PMF_TOL).any() or abs(x.sum() - 1.0) > PMF_TOL * max(1, x.shape[0]) * 10:
        raise InvalidModel(f"belief {x.tolist()} is not a probability vector")
    return x


def stationary_distribution(model: ModulationModel, strict: bool = False) -> StationaryDistribution:
    """Solve pi P = pi by replacing one balance equation with sum(pi) = 1."""
    P = model.P
    n = model.n_states
    balance = P.T - np.eye(n)
    unique = np.linalg.matrix_rank(balance, tol=1e-10) == n - 1
    A = balance.copy()
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    if unique:
        pi = np.linalg.solve(A, b)
    else:
        if strict:
            raise NoStationaryDistribution("stationary distribution is not unique")
        logger.warning("modulation chain has %d closed classes; stationary distribution is not unique",
                       n - np.linalg.matrix_rank(balance, tol=1e-10))
        pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    if (pi < -1e-10).any() or np.abs(pi @ P - pi).max() > 1e-10:
        raise NoStationaryDistribution(f"linear solve returned an invalid vector {pi.tolist()}")
    pi = np.clip(pi, 0.0, None)
    return StationaryDistribution(pi=pi / pi.sum(), unique=bool(unique))


def predictive(model: ModulationModel, x: Belief) -> np.ndarray:
    """One-step-ahead state distribution xP."""
    return np.asarray(x, dtype=float) @ model.P


def demand_likelihood(model: ModulationModel, d: Sequence[int], z: Optional[int] = None) -> np.ndarray:
    """Pr(d, z | j) for every modulation state j."""
    if len(d) != model.n_locations:
        raise InvalidModel(f"demand vector needs {model.n_locations} entries")
    like = np.ones(model.n_states)
    for l, dl in enumerate(d):
        like = like * model.O[l, :, model.outcome_index(dl)]
    if z is not None:
        if model.Z is None:
            raise InvalidModel("model has no AOD channel")
        like = like * model.Z[:, z]
    return like


def bayes_update(prior_next: np.ndarray, likelihood: np.ndarray) -> Belief:
    joint = prior_next * likelihood
    total = joint.sum()
    if total <= 0.0:
        raise ZeroLikelihood("observation has zero probability under the current belief")
    return joint / total


def sigma(model: ModulationModel, d: Sequence[int], z: Optional[int], x: Belief) -> float:
    return float(predictive(model, x) @ demand_likelihood(model, d, z))


def posterior(model: ModulationModel, d: Sequence[int], z: Optional[int], x: Belief) -> Belief:
    return bayes_update(predictive(model, x), demand_likelihood(model, d, z))


def local_posterior(model: ModulationModel, l: int, d: int, x: Belief) -> Belief:
    return bayes_update(predictive(model, x), model.O[l, :, model.outcome_index(d)])


def local_demand_pmf(model: ModulationModel, l: int, x: Belief) -> np.ndarray:
    """sigma(d_l^n, x) for every outcome n of location l."""
    return predictive(model, x) @ model.O[l]


def expected_demand(model: ModulationModel, l: int, x: Belief) -> float:
    return float(local_demand_pmf(model, l, x) @ model.demand_values)


def belief_grid(n_states: int, denominator: int, pi: Optional[Belief] = None) -> BeliefGrid:
    """Lattice points of the simplex with step 1/denominator, plus pi when given."""
    if denominator < 1:
        raise InvalidModel("grid resolution must be 1/k for an integer k >= 1")
    points = [tuple(c / denominator for c in comp) for comp in _compositions(denominator, n_states)]
    stationary_index = None
    if pi is not None:
        pi = check_belief(pi, n_states)
        lattice = np.asarray(points)
        hits = np.flatnonzero(np.abs(lattice - pi).max(axis=1) <= GRID_TOL)
        if hits.size:
            stationary_index = int(hits[0])
        else:
            points.append(tuple(float(p) for p in pi))
            stationary_index = len(points) - 1
    return BeliefGrid(points=tuple(points), denominator=denominator, stationary_index=stationary_index)


def grid_size(n_states: int, denominator: int) -> int:
    return comb(denominator + n_states - 1, n_states - 1)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def nearest_grid_index(grid: BeliefGrid, x: Belief) -> int:
    dist = np.sqrt(((grid.array - np.asarray(x, dtype=float)) ** 2).sum(axis=1))
    # first point within rounding of the minimum keeps ties in grid order
    return int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])


def nearest_grid_point(grid: BeliefGrid, x: Belief) -> Belief:
    return grid.point(nearest_grid_index(grid, x))


def demand_scenarios(model: ModulationModel):
    """Every joint demand vector in outcome order."""
    return itertools.product(model.outcomes, repeat=model.n_locations)
