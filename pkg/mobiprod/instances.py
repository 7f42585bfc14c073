"""Problem instances: the Instance record, Set A/B generators and instance files."""
import hashlib
import json
import logging
from math import ceil
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .modulation import ModulationModel
from .shared.errors import GenerationFailure, InvalidModel, UnsupportedChain
from .shared.models import SetId

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "mobiprod-instance/1"

SET_A_MODULE_SIZES = (1, 2, 5)
SET_A_STATE_COUNTS = (2, 3, 4)
SET_A_STAYING = (0.75, 0.95)
SET_A_MOVE_COSTS = (0.0, 1.5, 2.0, 2.5, 10000.0)
SET_B_LOCATIONS = (2, 5, 10, 15, 20, 25)
SET_B_MOVE_COSTS = (0.0, 1.5, 2.0, 2.5, 1000.0)

# mean-demand interval edges as multiples of G, one interval per modulation state
MEAN_INTERVALS: Dict[int, Tuple[float, ...]] = {
    2: (0.0, 1.0, 2.0),
    3: (0.0, 0.6, 1.4, 2.0),
    4: (0.0, 0.5, 1.0, 1.5, 2.0),
}
MAX_DIRICHLET_DRAWS = 100_000
DIRICHLET_CONCENTRATION = 1.0

SeedLike = Union[int, np.random.SeedSequence]


class Instance(BaseModel):
    """All parameters of one L-location, Y-module problem."""

    model_config = ConfigDict(frozen=True)

    instance_id: str
    set_id: Optional[SetId] = None
    n_modules: int = Field(..., ge=0, description="Y, total number of modules")
    module_size: int = Field(..., ge=1, description="G, capacity per module")
    module_cap: List[int] = Field(..., description="Y', module cap per location")
    fixed_capacity: List[int] = Field(..., description="U, fixed capacity per location")
    holding: List[float]
    backorder: List[float]
    transship_in: List[float] = Field(..., description="K^S+ per unit received")
    transship_out: List[float] = Field(..., description="K^S- per unit sent")
    module_move_cost: float = Field(..., ge=0, description="K^M per module moved")
    beta: float = Field(..., ge=0, lt=1)
    horizon: int = Field(30, ge=0)
    model: ModulationModel
    s_range_scale: int = Field(5, ge=1)
    seed: Optional[int] = None
    staying_probability: Optional[float] = None
    transship_cost: Optional[float] = None

    @field_validator("holding", "backorder", "transship_in", "transship_out")
    @classmethod
    def validate_costs(cls, v):
        if any(c < 0 for c in v):
            raise InvalidModel("cost rates must be nonnegative")
        return v

    @field_validator("module_cap", "fixed_capacity")
    @classmethod
    def validate_capacities(cls, v):
        if any(c < 0 for c in v):
            raise InvalidModel("capacities must be nonnegative")
        return v

    @model_validator(mode="after")
    def validate_dimensions(self):
        L = self.model.n_locations
        for name in ("module_cap", "fixed_capacity", "holding", "backorder",
                     "transship_in", "transship_out"):
            if len(getattr(self, name)) != L:
                raise InvalidModel(f"{name} needs one entry per location ({L})")
        if sum(self.module_cap) < self.n_modules:
            raise InvalidModel("module caps cannot host all modules")
        return self

    @property
    def n_locations(self) -> int:
        return self.model.n_locations

    def capacity(self, l: int, u: int) -> int:
        return self.fixed_capacity[l] + u * self.module_size

    def max_capacity(self, l: int) -> int:
        return self.capacity(l, self.module_cap[l])

    def default_s_range(self, l: int) -> Tuple[int, int]:
        reach = self.s_range_scale * (self.max_capacity(l) + self.model.d_max)
        return -reach, reach

    def period_cost(self, l: int, y: int, d: int) -> float:
        """Holding or backorder charge after demand d hits post-order level y."""
        return self.holding[l] * max(y - d, 0) + self.backorder[l] * max(d - y, 0)

    def transship_charge(self, l: int, delta: int) -> float:
        return self.transship_in[l] * max(delta, 0) + self.transship_out[l] * max(-delta, 0)

    def with_move_costs(self, transship_cost: float, module_move_cost: float,
                        instance_id: Optional[str] = None) -> "Instance":
        half = transship_cost / 2.0
        L = self.n_locations
        return self.model_copy(update={
            "instance_id": instance_id or self.instance_id,
            "transship_in": [half] * L,
            "transship_out": [half] * L,
            "transship_cost": transship_cost,
            "module_move_cost": module_move_cost,
        })

    def table_key_fields(self, l: int, grid_denominator: int,
                         s_range: Optional[Tuple[int, int]] = None) -> dict:
        """Exactly the inputs a location's value table depends on."""
        return {
            "schema": "mobiprod-table/1",
            "location": l,
            "holding": self.holding[l],
            "backorder": self.backorder[l],
            "module_size": self.module_size,
            "module_cap": self.module_cap[l],
            "fixed_capacity": self.fixed_capacity[l],
            "beta": self.beta,
            "grid_denominator": grid_denominator,
            "s_range": list(s_range or self.default_s_range(l)),
            "transition": self.model.transition,
            "outcomes": self.model.outcomes,
            "demand_pmf": self.model.demand_pmf[l],
        }


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def sha256_of(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def build_chain(n_states: int, staying_probability: float) -> List[List[float]]:
    """Birth-death modulation chain with self-loop probability phi."""
    if n_states not in MEAN_INTERVALS:
        raise UnsupportedChain(f"chains are defined for N in {sorted(MEAN_INTERVALS)}, got {n_states}")
    phi = staying_probability
    if not 0.0 < phi < 1.0:
        raise InvalidModel("staying probability must lie in (0, 1)")
    P = np.zeros((n_states, n_states))
    for i in range(n_states):
        P[i, i] = phi
        if i == 0:
            P[i, 1] = 1.0 - phi
        elif i == n_states - 1:
            P[i, i - 1] = 1.0 - phi
        else:
            P[i, i - 1] = P[i, i + 1] = (1.0 - phi) / 2.0
    return P.tolist()


def _in_interval(mean: float, lo: float, hi: float, closed: bool) -> bool:
    return lo <= mean <= hi if closed else lo <= mean < hi


def gen_demand_dists(n_states: int, module_size: int, n_locations: int,
                     seed: SeedLike) -> List[List[List[float]]]:
    """Random pmfs over {0..2G} whose per-state means land one per interval.

    State j of every location gets a mean in the j-th interval (ascending).
    Dirichlet draws are rejected until the mean falls inside.
    """
    if n_states not in MEAN_INTERVALS:
        raise UnsupportedChain(f"no mean partition for N={n_states}")
    rng = np.random.default_rng(seed)
    edges = [e * module_size for e in MEAN_INTERVALS[n_states]]
    outcomes = np.arange(2 * module_size + 1)
    alpha = np.full(outcomes.size, DIRICHLET_CONCENTRATION)
    pmfs = []
    for l in range(n_locations):
        location = []
        for j in range(n_states):
            lo, hi = edges[j], edges[j + 1]
            closed = j == n_states - 1
            for _ in range(MAX_DIRICHLET_DRAWS):
                p = rng.dirichlet(alpha)
                if _in_interval(float(p @ outcomes), lo, hi, closed):
                    break
            else:
                raise GenerationFailure(
                    f"no pmf with mean in [{lo}, {hi}) after {MAX_DIRICHLET_DRAWS} draws")
            # renormalize so the stored pmf sums to one at double precision
            location.append((p / p.sum()).tolist())
        pmfs.append(location)
    return pmfs


def n_modules_for(n_locations: int) -> int:
    return ceil(4 * n_locations / 3)


def _cost_label(c: float) -> str:
    return f"{c:g}"


def make_demand_instance(set_id: SetId, n_locations: int, module_size: int, n_states: int,
                         staying_probability: float, seed: SeedLike, beta: float,
                         horizon: int = 30, holding: float = 1.0, backorder: float = 2.0,
                         fixed_capacity: int = 0, index: int = 0) -> Instance:
    """One demand instance with zero movement costs; cost pairs are layered on later."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    model = ModulationModel(
        transition=build_chain(n_states, staying_probability),
        outcomes=list(range(2 * module_size + 1)),
        demand_pmf=gen_demand_dists(n_states, module_size, n_locations, ss),
    )
    Y = n_modules_for(n_locations)
    L = n_locations
    return Instance(
        instance_id=(f"{set_id.value}-L{L}-G{module_size}-N{n_states}"
                     f"-phi{staying_probability:g}-d{index}"),
        set_id=set_id,
        n_modules=Y,
        module_size=module_size,
        module_cap=[Y] * L,
        fixed_capacity=[fixed_capacity] * L,
        holding=[holding] * L,
        backorder=[backorder] * L,
        transship_in=[0.0] * L,
        transship_out=[0.0] * L,
        module_move_cost=0.0,
        beta=beta,
        horizon=horizon,
        model=model,
        seed=int(seed) if isinstance(seed, (int, np.integer)) else None,
        staying_probability=staying_probability,
        transship_cost=0.0,
    )


def cost_pairs(costs: Sequence[float]) -> List[Tuple[float, float]]:
    return [(ks, km) for ks in costs for km in costs]


def expand_cost_pairs(base: Instance, costs: Sequence[float]) -> List[Instance]:
    return [
        base.with_move_costs(ks, km, instance_id=f"{base.instance_id}-KS{_cost_label(ks)}-KM{_cost_label(km)}")
        for ks, km in cost_pairs(costs)
    ]


def child_seed(ss: np.random.SeedSequence) -> int:
    """Standalone integer seed for one spawned demand instance; stored on the instance."""
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def gen_set_A(master_seed: int, beta: float = 0.95, horizon: int = 30) -> List[Instance]:
    """18 demand instances crossed with 25 movement-cost pairs."""
    root = np.random.SeedSequence(master_seed)
    demand_specs = [(G, N, phi) for G in SET_A_MODULE_SIZES
                    for N in SET_A_STATE_COUNTS for phi in SET_A_STAYING]
    children = root.spawn(len(demand_specs))
    instances = []
    for index, ((G, N, phi), child) in enumerate(zip(demand_specs, children)):
        base = make_demand_instance(SetId.A, 5, G, N, phi, child_seed(child), beta, horizon, index=index)
        instances.extend(expand_cost_pairs(base, SET_A_MOVE_COSTS))
    logger.info("generated Set A: %d instances from %d demand instances", len(instances), len(demand_specs))
    return instances


def gen_set_B(master_seed: int, beta: float = 0.95, horizon: int = 30) -> List[Instance]:
    """6 location counts crossed with 25 movement-cost pairs (G=1, N=3, phi=0.95)."""
    root = np.random.SeedSequence(master_seed)
    children = root.spawn(len(SET_B_LOCATIONS))
    instances = []
    for index, (L, child) in enumerate(zip(SET_B_LOCATIONS, children)):
        base = make_demand_instance(SetId.B, L, 1, 3, 0.95, child_seed(child), beta, horizon, index=index)
        instances.extend(expand_cost_pairs(base, SET_B_MOVE_COSTS))
    logger.info("generated Set B: %d instances", len(instances))
    return instances


def demand_instance_key(instance: Instance) -> str:
    """Hash of the demand side only; cost-pair siblings share it."""
    return sha256_of({"transition": instance.model.transition,
                      "demand_pmf": instance.model.demand_pmf,
                      "outcomes": instance.model.outcomes})


def instance_to_dict(instance: Instance) -> dict:
    body = instance.model_dump(mode="json")
    return {
        "schema": SCHEMA_VERSION,
        "meta": {
            "units": {
                "demand": "product units/period",
                "inventory": "product units",
                "capacity": "product units/period",
                "costs": "currency units",
                "beta": "dimensionless",
            },
            "n_locations": instance.n_locations,
            "n_states": instance.model.n_states,
            "n_outcomes": instance.model.n_outcomes,
        },
        "instance": body,
    }


def instance_hash(instance: Instance) -> str:
    return sha256_of(instance_to_dict(instance))


def instance_from_dict(payload: dict) -> Instance:
    if payload.get("schema") != SCHEMA_VERSION:
        raise InvalidModel(f"unsupported instance schema {payload.get('schema')!r}")
    return Instance.model_validate(payload["instance"])


def save_instance(instance: Instance, path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = instance_to_dict(instance)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return sha256_of(payload)


def load_instance(path: Union[str, Path]) -> Instance:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidModel(f"{path}: not a JSON instance file ({e})")
    return instance_from_dict(payload)
