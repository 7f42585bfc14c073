import numpy as np
import pytest

from mobiprod.instances import make_demand_instance
from mobiprod.modulation import ModulationModel, belief_grid, local_demand_pmf
from mobiprod.harness import stationary_grid
from mobiprod.shared.errors import ConvergenceFailure, InvalidModel, NonConvexTable
from mobiprod.shared.models import SetId
from mobiprod.sl_value import ValueTable, blended_value, bound_gap_rho, check_structure, extract_facets, \
    iterate_static_values, lower_hull_facets, myopic_base_stock, static_value_iteration, stopping_tolerance, \
    sweep_is_monotone, table_from_bytes, table_to_bytes

STRUCTURE_TOL = 1e-7


def single_location(make_instance, outcomes, pmf, transition=((1.0,),), **kwargs):
    return make_instance(L=1, transition=transition, outcomes=outcomes, pmf=pmf, **kwargs)


def grid_for(instance, denominator=3):
    return stationary_grid(instance, denominator)


def synthetic_table(column, s_min=-3):
    values = np.asarray(column, dtype=float).reshape(1, -1, 1)
    return ValueTable(location=0, grid=belief_grid(1, 1, np.array([1.0])), s_min=s_min,
                      s_max=s_min + values.shape[1] - 1, values=values,
                      base_stock=np.zeros((1, 1), dtype=np.int64), low_slope=0.0, high_slope=0.0)


def test_stopping_tolerance():
    assert stopping_tolerance(0.0) == 1e-6
    assert stopping_tolerance(0.95) == pytest.approx(1e-6 * 0.05 / 1.9)


def test_zero_demand_table(make_instance):
    inst = single_location(make_instance, (0,), [[1.0]], Y=1)
    table = static_value_iteration(inst, 0, grid_for(inst))
    for u in range(table.u_max + 1):
        assert table.lookup(0, 0, u) == pytest.approx(0.0, abs=1e-9)
        assert table.base_stock[0, u] == 0


def test_myopic_period_when_beta_is_zero(make_instance):
    inst = make_instance(L=1, beta=0.0, Y=2)
    grid = grid_for(inst)
    table = static_value_iteration(inst, 0, grid)
    outcomes = np.asarray(inst.model.outcomes)
    for gp in range(len(grid)):
        pmf = local_demand_pmf(inst.model, 0, grid.point(gp))
        for s in (-3, -1, 0, 2):
            for u in range(3):
                window = range(s, s + inst.capacity(0, u) + 1)
                expected = min(float(pmf @ (inst.holding[0] * np.maximum(y - outcomes, 0)
                                            + inst.backorder[0] * np.maximum(outcomes - y, 0)))
                               for y in window)
                assert table.lookup(gp, s, u) == pytest.approx(expected, abs=1e-12)


def test_deterministic_unit_demand(make_instance):
    inst = single_location(make_instance, (0, 1), [[0.0, 1.0]], Y=1)
    table = static_value_iteration(inst, 0, grid_for(inst))
    assert table.lookup(0, 0, 1) == pytest.approx(0.0, abs=1e-9)
    assert table.base_stock[0, 1] == 1


def test_tables_are_structurally_sound():
    for seed in range(4):
        inst = make_demand_instance(SetId.A, 1, 1 + seed % 2, 2 + seed % 2, (0.75, 0.95)[seed % 2],
                                    seed, beta=0.9, horizon=5)
        inst = inst.model_copy(update={"n_modules": 2, "module_cap": [2], "s_range_scale": 3})
        table = static_value_iteration(inst, 0, grid_for(inst))
        assert check_structure(table, STRUCTURE_TOL) == [], inst.instance_id
        assert table.residual <= stopping_tolerance(inst.beta)


def test_iterates_are_monotone_and_convex(make_instance):
    inst = make_instance(L=1, Y=2)
    previous = None
    for k, (values, base_stock, _) in enumerate(iterate_static_values(inst, 0, grid_for(inst))):
        assert (np.diff(values, n=2, axis=1) >= -STRUCTURE_TOL).all()
        if previous is not None:
            assert sweep_is_monotone(previous, values)
        previous = values.copy()
        if k == 40:
            break


def test_horizon_gives_n_step_table(make_instance):
    inst = make_instance(L=1, Y=1)
    grid = grid_for(inst)
    zero = static_value_iteration(inst, 0, grid, horizon=0)
    assert not zero.values.any()
    three = static_value_iteration(inst, 0, grid, horizon=3)
    assert three.iterations == 3
    sweeps = iterate_static_values(inst, 0, grid)
    for _ in range(3):
        values, _, _ = next(sweeps)
    np.testing.assert_allclose(three.values, values)


def test_non_convergence_reports_residual(make_instance):
    inst = make_instance(L=1, Y=1, beta=0.99)
    with pytest.raises(ConvergenceFailure) as excinfo:
        static_value_iteration(inst, 0, grid_for(inst), max_iters=2)
    assert excinfo.value.residual > 0


def test_lookup_extends_with_tails(make_instance):
    inst = make_instance(L=1, Y=1)
    table = static_value_iteration(inst, 0, grid_for(inst), s_range=(-2, 2))
    assert table.lookup(0, -4, 1) == pytest.approx(table.lookup(0, -2, 1) + 2 * inst.backorder[0] / (1 - inst.beta))
    assert table.lookup(0, 5, 0) == pytest.approx(table.lookup(0, 2, 0) + 3 * inst.holding[0] / (1 - inst.beta))
    np.testing.assert_allclose(table.lookup(0, np.array([-2, 0, 2]), 1),
                               [table.lookup(0, s, 1) for s in (-2, 0, 2)])
    with pytest.raises(InvalidModel):
        table.lookup(0, 0, 5)


def test_blended_value(make_instance):
    inst = make_instance(L=1, Y=2)
    table = static_value_iteration(inst, 0, grid_for(inst))
    full, own = table.lookup(1, 0, 2), table.lookup(1, 0, 0)
    assert blended_value(table, 1.0, 1, 0, 0) == pytest.approx(own)
    assert blended_value(table, 0.0, 1, 0, 0) == pytest.approx(full)
    assert blended_value(table, 0.5, 1, 0, 0) == pytest.approx((full + own) / 2)
    with pytest.raises(InvalidModel):
        blended_value(table, 1.5, 1, 0, 0)


def test_myopic_base_stock():
    uniform = ModulationModel(transition=[[1.0]], outcomes=[0, 1, 2], demand_pmf=[[[1 / 3, 1 / 3, 1 / 3]]])
    x = np.array([1.0])
    assert myopic_base_stock(uniform, 0, x, holding=1.0, backorder=2.0) == 1
    assert myopic_base_stock(uniform, 0, x, holding=1.0, backorder=0.0) == 0
    fixed = ModulationModel(transition=[[1.0]], outcomes=[0, 4], demand_pmf=[[[0.0, 1.0]]])
    assert myopic_base_stock(fixed, 0, x, holding=1.0, backorder=2.0) == 4
    # no cost at all: the smallest outcome, whatever the listing order
    unsorted = ModulationModel(transition=[[1.0]], outcomes=[3, 0, 1], demand_pmf=[[[0.5, 0.25, 0.25]]])
    assert myopic_base_stock(unsorted, 0, x, holding=0.0, backorder=0.0) == 0


def test_lower_hull_of_absolute_value():
    xs = np.arange(-3, 4, dtype=float)
    facets = lower_hull_facets(xs, np.abs(xs))
    np.testing.assert_allclose(facets[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(facets[:, 1], [0.0, 0.0], atol=1e-12)


def test_affine_table_has_one_facet():
    facets = extract_facets(synthetic_table([2.0 * s + 1.0 for s in range(-3, 4)]), 0)
    assert len(facets.gamma_at(0)) == 1
    np.testing.assert_allclose(facets.gamma_at(0)[0], [2.0, 1.0])


def test_non_convex_table_is_rejected():
    with pytest.raises(NonConvexTable):
        extract_facets(synthetic_table([0.0, 2.0, 1.0]), 0)


def test_facets_reproduce_computed_tables(make_instance):
    inst = make_instance(L=1, Y=2)
    grid = grid_for(inst)
    table = static_value_iteration(inst, 0, grid)
    for gp in range(len(grid)):
        for theta in (0.0, 0.2, 1.0):
            fs = extract_facets(table, gp, theta)
            for u in range(table.u_max + 1):
                facets = fs.gamma_at(u)
                rebuilt = (facets[:, 0][None, :] * table.s_levels[:, None] + facets[:, 1][None, :]).max(axis=1)
                np.testing.assert_allclose(rebuilt, blended_value(table, theta, gp, table.s_levels, u), atol=1e-6)
            # capacity facets clamp to the table edge
            np.testing.assert_allclose(fs.theta_at(table.s_max + 10), fs.theta_at(table.s_max))


def test_bound_gap_rho(make_instance):
    coin = [[0.5, 0.5], [0.5, 0.5]]
    inst = make_instance(L=1, Y=1, beta=0.5, transition=coin, outcomes=(0, 1), pmf=[[0.9, 0.1], [0.1, 0.9]])
    assert bound_gap_rho(inst, 0, np.array([0.5, 0.5]), 0, 1) == pytest.approx(3.2)
    same = make_instance(L=1, Y=1, beta=0.5, transition=coin, outcomes=(0, 1), pmf=[[0.3, 0.7], [0.3, 0.7]])
    assert bound_gap_rho(same, 0, np.array([0.5, 0.5]), 0, 1) == 0.0
    single = make_instance(L=1, Y=1, transition=[[1.0]], outcomes=(0, 1), pmf=[[0.3, 0.7]])
    assert bound_gap_rho(single, 0, np.array([1.0]), 2, 1) == 0.0


def test_table_payload_survives_serialization(make_instance):
    inst = make_instance(L=1, Y=1)
    table = static_value_iteration(inst, 0, grid_for(inst))
    restored = table_from_bytes(table_to_bytes(table))
    np.testing.assert_array_equal(restored.values, table.values)
    np.testing.assert_array_equal(restored.base_stock, table.base_stock)
    assert restored.grid.points == table.grid.points
    assert restored.grid.stationary_index == table.grid.stationary_index
    assert (restored.s_min, restored.s_max, restored.iterations) == (table.s_min, table.s_max, table.iterations)


def test_base_stock_is_myopic_with_ample_capacity(make_instance):
    # one module covers the largest demand, so the newsvendor level is always reachable again
    inst = make_instance(L=1, G=2, Y=1, cap=(1,))
    grid = grid_for(inst)
    table = static_value_iteration(inst, 0, grid)
    for gp in range(len(grid)):
        expected = myopic_base_stock(inst.model, 0, grid.point(gp), inst.holding[0], inst.backorder[0])
        assert table.s_min <= expected <= table.s_max
        assert table.base_stock[gp, 1] == expected
