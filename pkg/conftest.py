import os
import tempfile

# settings are read once at import; point the cache at a throwaway database first
_TMP = tempfile.mkdtemp(prefix="mobiprod-tests-")
os.environ.setdefault("MOBIPROD_DATABASE_URL", f"sqlite:///{_TMP}/cache.db")
os.environ.setdefault("MOBIPROD_RECORD_TIMING", "false")

import numpy as np
import pytest

from mobiprod.harness import stationary_grid
from mobiprod.instances import Instance, build_chain
from mobiprod.modulation import ModulationModel
from mobiprod.policies import PolicyContext
from mobiprod.sl_value import build_value_tables

LOW_HIGH_PMF = [[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]]


def _instance(L=2, G=1, Y=2, cap=None, fixed=0, h=1.0, b=2.0, ks=1.0, km=1.0, beta=0.9,
              transition=None, outcomes=(0, 1, 2), pmf=None, s_range_scale=2, instance_id="toy"):
    transition = transition if transition is not None else build_chain(2, 0.8)
    pmf = pmf if pmf is not None else LOW_HIGH_PMF
    model = ModulationModel(
        transition=[list(r) for r in transition],
        outcomes=list(outcomes),
        demand_pmf=[[list(p) for p in pmf] for _ in range(L)],
    )
    cap = [Y] * L if cap is None else list(cap)
    return Instance(
        instance_id=instance_id,
        n_modules=Y,
        module_size=G,
        module_cap=cap,
        fixed_capacity=[fixed] * L,
        holding=[h] * L,
        backorder=[b] * L,
        transship_in=[ks / 2.0] * L,
        transship_out=[ks / 2.0] * L,
        module_move_cost=km,
        beta=beta,
        horizon=5,
        model=model,
        s_range_scale=s_range_scale,
        transship_cost=ks,
    )


@pytest.fixture
def make_instance():
    """Factory for small hand-built instances (two-state chain, outcomes 0..2 by default)."""
    return _instance


@pytest.fixture
def make_context():
    def build(instance, denominator=3):
        grid = stationary_grid(instance, denominator)
        return PolicyContext(instance, grid, build_value_tables(instance, grid))
    return build


@pytest.fixture(scope="session")
def toy_context():
    instance = _instance()
    grid = stationary_grid(instance, 3)
    return PolicyContext(instance, grid, build_value_tables(instance, grid))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
