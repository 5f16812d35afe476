# tests/test_dispatch.py
"""
Dispatch oracle against the four-unit cost table, the brute-force grid
oracle and the KKT residual evaluator.
"""

import numpy as np
import pytest

from gridsync.controller import CostFunction
from gridsync.dispatch import DispatchProblem, check_a3, kkt_residual, solve_sfc, solve_sfc_grid
from gridsync.errors import Infeasible


# ---------- 39-bus cost table ----------
def test_ne39_costs_interior_dispatch():
    problem = DispatchProblem.ne39_costs(3414.0)
    sol = solve_sfc(problem)
    assert sol.pg == pytest.approx([926.9, 610.1, 834.2, 1042.75], abs=0.2)
    assert sol.marginal_costs(problem) == pytest.approx(np.full(4, 0.11542), abs=1e-5)
    assert -sol.lam == pytest.approx(0.11542, abs=1e-5)
    assert sol.binding == {}
    assert sol.kkt_residual < 1e-6


def test_ne39_costs_stage_two_binds_two_units():
    problem = DispatchProblem.ne39_costs(3534.0)
    sol = solve_sfc(problem)
    assert sol.binding == {2: "upper", 3: "upper"}
    assert sol.pg[2] == pytest.approx(850.0) and sol.pg[3] == pytest.approx(1080.0)
    assert sol.pg[0] == pytest.approx(967.7, abs=0.2)
    assert sol.pg[1] == pytest.approx(636.3, abs=0.2)
    assert np.all(sol.gamma_plus[2:] > 0.0)
    assert sol.pg.sum() == pytest.approx(3534.0, abs=1e-6)
    assert sol.kkt_residual < 1e-6


def test_demand_at_capacity_edges():
    low = solve_sfc(DispatchProblem.ne39_costs(0.0))
    assert np.all(low.pg == 0.0)
    assert set(low.binding.values()) == {"lower"}
    high = solve_sfc(DispatchProblem.ne39_costs(3930.0))
    assert high.pg == pytest.approx([1000.0, 1000.0, 850.0, 1080.0])
    assert set(high.binding.values()) == {"upper"}


def test_infeasible_demand_rejected():
    with pytest.raises(Infeasible, match="A3"):
        solve_sfc(DispatchProblem.ne39_costs(4000.0))
    assert check_a3(DispatchProblem.ne39_costs(3930.0)) == (True, False)
    assert check_a3(DispatchProblem.ne39_costs(-1.0)) == (False, False)


# ---------- Oracles agree ----------
@pytest.mark.parametrize("demand", [500.0, 3414.0, 3534.0, 3900.0])
def test_bisection_matches_grid_oracle(demand):
    problem = DispatchProblem.ne39_costs(demand)
    pg_grid, _ = solve_sfc_grid(problem)
    assert solve_sfc(problem).pg == pytest.approx(pg_grid, abs=0.05)


def test_random_problems_satisfy_kkt():
    rng = np.random.default_rng(17)
    for _ in range(25):
        n = int(rng.integers(2, 8))
        costs = tuple(CostFunction(rng.uniform(0.5, 5.0), rng.uniform(-1.0, 1.0)) for _ in range(n))
        p_min = rng.uniform(0.0, 0.5, n)
        p_max = p_min + rng.uniform(0.2, 2.0, n)
        demand = rng.uniform(p_min.sum(), p_max.sum())
        sol = solve_sfc(DispatchProblem(costs, p_min, p_max, demand))
        assert sol.kkt_residual < 1e-6
        assert np.all(sol.pg >= p_min - 1e-12) and np.all(sol.pg <= p_max + 1e-12)


# ---------- KKT residual ----------
def test_kkt_residual_flags_each_condition():
    problem = DispatchProblem.ne39_costs(3414.0)
    sol = solve_sfc(problem)
    ok = kkt_residual(problem, sol.pg, sol.lam, sol.gamma_minus, sol.gamma_plus)
    assert ok.max < 1e-6

    per_node = kkt_residual(problem, sol.pg, np.full(4, sol.lam), sol.gamma_minus, sol.gamma_plus)
    assert per_node.max == pytest.approx(ok.max)

    off = kkt_residual(problem, sol.pg + 1.0, sol.lam, sol.gamma_minus, sol.gamma_plus)
    assert off.balance == pytest.approx(4.0)
    assert off.stationarity > 0.0

    bad_sign = kkt_residual(problem, sol.pg, sol.lam, -np.ones(4), sol.gamma_plus)
    assert bad_sign.dual_sign == pytest.approx(1.0)


def test_problem_validation():
    cost = CostFunction(1.0, 0.0)
    with pytest.raises(ValueError):
        DispatchProblem((), np.zeros(0), np.zeros(0), 0.0)
    with pytest.raises(ValueError):
        DispatchProblem((cost,), np.array([2.0]), np.array([1.0]), 1.5)
    with pytest.raises(ValueError):
        DispatchProblem((cost, cost), np.zeros(2), np.ones(2), 1.0, names=("A",))
