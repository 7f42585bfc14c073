import itertools

import numpy as np
import pytest

from mobiprod.optimizer import EQ, GE, LE, Option, ProblemBuilder, format_lp, is_integral, relocation_problem, \
    solve_lp, solve_mip, solve_relocation_dp, stage_ranges, write_lp
from mobiprod.shared.errors import BudgetExceeded, InfeasibleProblem, UnboundedProblem
from mobiprod.shared.models import SolveStatus

KNAPSACK_VALUES = [10, 13, 7, 8, 4, 6]
KNAPSACK_WEIGHTS = [5, 6, 4, 5, 3, 4]
KNAPSACK_CAPACITY = 14


def knapsack():
    b = ProblemBuilder()
    items = [b.var(f"take_{i}", 0.0, 1.0, -v, integer=True) for i, v in enumerate(KNAPSACK_VALUES)]
    b.row({j: float(w) for j, w in zip(items, KNAPSACK_WEIGHTS)}, LE, KNAPSACK_CAPACITY, "capacity")
    return b.build()


def random_options(rng, L, reach):
    options = []
    for _ in range(L):
        s_lo, s_hi = -int(rng.integers(0, reach + 1)), int(rng.integers(0, reach + 1))
        m_lo, m_hi = -int(rng.integers(0, reach + 1)), int(rng.integers(0, reach + 1))
        options.append([Option(ds, dm, float(np.round(rng.uniform(0, 10), 3)))
                        for ds in range(s_lo, s_hi + 1) for dm in range(m_lo, m_hi + 1)])
    return options


def brute_force(options):
    """Cross-product enumeration; the last location is matched by a lookup on the balancing move."""
    last = {}
    for o in options[-1]:
        key = (-o.delta_s, -o.delta_m)
        last[key] = min(last.get(key, np.inf), o.cost)
    best = np.inf
    for combo in itertools.product(*options[:-1]):
        key = (sum(o.delta_s for o in combo), sum(o.delta_m for o in combo))
        if key in last:
            best = min(best, sum(o.cost for o in combo) + last[key])
    return best


def vertex_oracle(c, A, b):
    """Best vertex of {x : A x <= b} by solving every square subsystem."""
    n = len(c)
    best = np.inf
    for rows in itertools.combinations(range(A.shape[0]), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if (A @ x <= b + 1e-7).all():
            best = min(best, float(c @ x))
    return best


def test_lp_with_bounds_only():
    b = ProblemBuilder()
    b.var("x", 1.0, 3.0, 1.0)
    solution = solve_lp(b.build())
    assert solution.status == SolveStatus.OPTIMAL
    assert solution.x[0] == pytest.approx(1.0)
    assert solution.objective == pytest.approx(1.0)


def test_lp_contradictory_rows_are_infeasible():
    b = ProblemBuilder()
    x = b.var("x")
    b.row({x: 1.0}, LE, 0.0)
    b.row({x: 1.0}, GE, 1.0)
    solution = solve_lp(b.build())
    assert solution.status == SolveStatus.INFEASIBLE
    with pytest.raises(InfeasibleProblem):
        solution.require_optimal("contradiction")


def test_lp_unbounded():
    b = ProblemBuilder()
    x = b.var("x", 0.0, np.inf, -1.0)
    y = b.var("y", 0.0, np.inf, 0.0)
    b.row({x: 1.0, y: -1.0}, LE, 2.0)
    solution = solve_lp(b.build())
    assert solution.status == SolveStatus.UNBOUNDED
    with pytest.raises(UnboundedProblem):
        solution.require_optimal("ray")


def test_lp_free_and_negative_variables():
    b = ProblemBuilder()
    x = b.var("x", -np.inf, np.inf, 1.0)
    y = b.var("y", -np.inf, -2.0, -1.0)
    b.row({x: 1.0, y: 1.0}, EQ, 0.0)
    b.row({x: 1.0}, GE, -5.0)
    solution = solve_lp(b.build())
    # x = -y and x >= -5, y <= -2: objective x - y = 2x, minimized at x = 2
    np.testing.assert_allclose(solution.x, [2.0, -2.0], atol=1e-9)
    assert solution.objective == pytest.approx(4.0)


def test_lp_matches_vertex_enumeration(rng):
    n, m, top = 5, 3, 4.0
    for _ in range(25):
        c = rng.uniform(-5, 5, n)
        A = rng.uniform(-3, 5, (m, n))
        rhs = rng.uniform(1, 10, m)
        b = ProblemBuilder()
        xs = [b.var(f"x{j}", 0.0, top, float(c[j])) for j in range(n)]
        for i in range(m):
            b.row({xs[j]: float(A[i, j]) for j in range(n)}, LE, float(rhs[i]))
        solution = solve_lp(b.build())
        full_A = np.vstack([A, -np.eye(n), np.eye(n)])
        full_b = np.concatenate([rhs, np.zeros(n), np.full(n, top)])
        assert solution.status == SolveStatus.OPTIMAL
        assert solution.objective == pytest.approx(vertex_oracle(c, full_A, full_b), abs=1e-6)
        assert solution.objective == pytest.approx(float(c @ solution.x), abs=1e-7)


def test_mip_integral_relaxation_takes_one_node():
    b = ProblemBuilder()
    x = b.var("x", 0.0, 5.0, 1.0, integer=True)
    y = b.var("y", 0.0, 5.0, 2.0, integer=True)
    b.row({x: 1.0, y: 1.0}, GE, 2.0)
    solution = solve_mip(b.build())
    assert solution.optimal
    assert solution.nodes == 1
    np.testing.assert_allclose(solution.x, [2.0, 0.0])


def test_mip_knapsack_matches_enumeration():
    best = max(sum(v for v, t in zip(KNAPSACK_VALUES, pick) if t)
               for pick in itertools.product((0, 1), repeat=len(KNAPSACK_VALUES))
               if sum(w for w, t in zip(KNAPSACK_WEIGHTS, pick) if t) <= KNAPSACK_CAPACITY)
    solution = solve_mip(knapsack())
    assert solution.optimal
    assert -solution.objective == pytest.approx(best)
    assert is_integral(solution.x, np.ones(len(KNAPSACK_VALUES), dtype=bool))
    # incumbent never beats the root relaxation
    assert solution.objective >= solution.root_bound - 1e-7


def test_mip_without_integer_point_is_infeasible():
    b = ProblemBuilder()
    x = b.var("x", 0.0, 1.0, 1.0, integer=True)
    b.row({x: 1.0}, GE, 0.2)
    b.row({x: 1.0}, LE, 0.8)
    assert solve_mip(b.build()).status == SolveStatus.INFEASIBLE


def test_mip_node_budget():
    with pytest.raises(BudgetExceeded):
        solve_mip(knapsack(), node_budget=1)


def test_mip_is_deterministic():
    first, second = solve_mip(knapsack()), solve_mip(knapsack())
    np.testing.assert_array_equal(first.x, second.x)
    assert first.nodes == second.nodes


def test_relocation_single_location_is_forced_to_zero():
    options = [[Option(-1, 0, 0.0), Option(0, 0, 5.0), Option(1, 1, 0.0)]]
    selection = solve_relocation_dp(options)
    assert selection.choices == (Option(0, 0, 5.0),)
    assert selection.cost == 5.0


def test_relocation_ties_pick_first_option_in_order():
    opts = [Option(ds, dm, 0.0) for ds in (-1, 0, 1) for dm in (-1, 0, 1)]
    selection = solve_relocation_dp([opts, list(opts)])
    assert selection.cost == 0.0
    assert selection.choices == (Option(-1, -1, 0.0), Option(1, 1, 0.0))


def test_relocation_without_balance_is_infeasible():
    with pytest.raises(InfeasibleProblem):
        solve_relocation_dp([[Option(1, 0, 0.0)], [Option(1, 0, 0.0)]])
    with pytest.raises(InfeasibleProblem):
        solve_relocation_dp([[Option(0, 0, 0.0)], []])


def test_relocation_solvers_agree(rng):
    for _ in range(100):
        options = random_options(rng, int(rng.integers(1, 4)), 1)
        expected = brute_force(options)
        selection = solve_relocation_dp(options)
        problem, _ = relocation_problem(options)
        solution = solve_mip(problem)
        assert selection.cost == pytest.approx(expected, abs=1e-7)
        assert solution.objective == pytest.approx(expected, abs=1e-7)
        assert sum(o.delta_s for o in selection.choices) == 0
        assert sum(o.delta_m for o in selection.choices) == 0


def test_stage_ranges_shrink_to_balanceable_sums():
    wide = [Option(ds, dm, 0.0) for ds in range(-3, 4) for dm in (-1, 0, 1)]
    fixed = [Option(0, 0, 0.0)]
    ranges = stage_ranges([wide, wide, fixed])
    assert ranges[0] == ((0, 0), (0, 0))
    # the last location cannot move, so after two locations only zero sums survive
    assert ranges[1] == ((-3, 3), (-1, 1))
    assert ranges[2] == ((0, 0), (0, 0))
    assert ranges[3] == ((0, 0), (0, 0))


def test_relocation_with_many_locations():
    # 25 locations, each able to move up to 3 units and one module; only location 0 profits from receiving
    def cost(l, ds, dm):
        return (-10.0 if l == 0 and ds == 3 else float(abs(ds))) + abs(dm)

    options = [[Option(ds, dm, cost(l, ds, dm)) for ds in range(-3, 4) for dm in (-1, 0, 1)] for l in range(25)]
    ranges = stage_ranges(options)
    assert max(s[1] - s[0] for s, _ in ranges) == 72
    assert ranges[12][0] == (-36, 36)
    selection = solve_relocation_dp(options)
    assert selection.cost == pytest.approx(-7.0)
    assert selection.choices[0].delta_s == 3
    assert sum(o.delta_s for o in selection.choices) == 0
    assert all(o.delta_m == 0 for o in selection.choices)


@pytest.mark.slow
def test_relocation_solvers_agree_at_full_range(rng):
    for _ in range(1000):
        options = random_options(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        expected = brute_force(options)
        assert solve_relocation_dp(options).cost == pytest.approx(expected, abs=1e-7)
        problem, _ = relocation_problem(options)
        assert solve_mip(problem).objective == pytest.approx(expected, abs=1e-7)


def test_lp_dump(tmp_path):
    problem = knapsack()
    text = format_lp(problem)
    for section in ("Minimize", "Subject To", "Bounds", "Generals", "End"):
        assert section in text
    assert " capacity: 5 take_0 + 6 take_1" in text
    path = tmp_path / "knapsack.lp"
    write_lp(problem, path)
    assert path.read_text(encoding="utf-8") == text
