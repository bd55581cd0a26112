import numpy as np
import pytest

from storarb import (
    BudgetExceeded,
    GridSpec,
    Infeasible,
    compare,
    dp_solve,
    exhaustive_solve,
    solve,
    validate_instance,
)
from storarb.oracle import build_level_grid

from conftest import pwl_instance, quad_instance, random_quad_instance


class TestDpSolve:
    def test_pwl152_within_bound(self, pwl152):
        dp = dp_solve(pwl152, GridSpec(level_points=201))
        assert abs(dp.objective - (-4.0)) <= dp.error_bound
        assert dp.objective >= -4.0 - 1e-9  # grid paths cannot beat the optimum

    def test_constant_prices_zero(self):
        # the zero path is on-grid; only float dust from tied buy/sell
        # pairs at one price can remain
        inst = pwl_instance([2.0, 2.0, 2.0, 2.0], capacity=5.0, rate=1.0)
        dp = dp_solve(inst, GridSpec(level_points=51))
        assert dp.objective == pytest.approx(0.0, abs=1e-12)

    def test_refinement_converges_to_closed_form(self):
        # two-step quadratic with the capacity binding: the optimum is
        # -2E + E^2/2 at E=1, i.e. -1.5
        inst = quad_instance([1.0, 3.0], lam=0.25, capacity=1.0, p_in=5.0)
        inst = _direct_quad(inst, [1.0, 3.0], 0.25)
        objs = [dp_solve(inst, GridSpec(level_points=n)).objective for n in (11, 101, 1001)]
        assert objs[-1] == pytest.approx(-1.5, abs=2e-3)
        # nested grids: refining cannot lose previously available paths
        nested = [dp_solve(inst, GridSpec(level_points=n)).objective for n in (11, 21, 41)]
        assert nested[0] >= nested[1] >= nested[2] - 1e-12

    def test_budget_guard(self, pwl152):
        with pytest.raises(BudgetExceeded):
            dp_solve(pwl152, GridSpec(level_points=201, dp_budget=100.0))

    def test_grid_includes_boundary_levels(self):
        inst = quad_instance([1.0, 3.0], lam=0.1, capacity=7.0, s0=1.234, sT=0.567)
        grid = build_level_grid(GridSpec(level_points=11), inst.spec)
        for v in (0.0, 7.0, 1.234, 0.567):
            assert v in grid


def _direct_quad(inst, prices, slope):
    from storarb import Instance
    from storarb.costs import PriceImpactParams, quadratic_impact_cost

    return Instance(
        spec=inst.spec,
        costs=tuple(
            quadratic_impact_cost(PriceImpactParams(p, slope, 1.0)) for p in prices
        ),
    )


class TestExhaustive:
    def test_pwl152_ground_truth(self, pwl152):
        res = exhaustive_solve(pwl152, 3)
        assert res.objective == pytest.approx(-4.0, abs=1e-12)
        assert np.allclose(res.schedule.controls, [1.0, -1.0, 0.0])

    def test_infeasible_propagates(self):
        inst = pwl_instance([1.0, 1.0], capacity=10.0, rate=1.0, sT=5.0)
        with pytest.raises(Infeasible):
            exhaustive_solve(inst, 3)

    def test_single_forced_step(self):
        inst = pwl_instance([7.0], capacity=5.0, rate=1.0)
        res = exhaustive_solve(inst, 5)
        assert res.objective == 0.0
        assert res.schedule.controls[0] == 0.0

    def test_budget_guard(self):
        inst = pwl_instance([1.0] * 12, capacity=5.0, rate=1.0)
        with pytest.raises(BudgetExceeded):
            exhaustive_solve(inst, 9, budget=1e4)


class TestCompare:
    def test_identical_solutions(self, pwl152):
        dp = dp_solve(pwl152, GridSpec(level_points=101))
        rep = compare(dp, dp, tol=1e-12)
        assert rep.objective_gap == 0.0 and rep.max_level_gap == 0.0 and rep.passed

    def test_solver_vs_dp(self, pwl152_validated):
        sol = solve(pwl152_validated)
        dp = dp_solve(pwl152_validated, GridSpec(level_points=201))
        assert compare(sol, dp, tol=dp.error_bound).passed

    def test_zero_schedule_fails_on_arbitrage_instance(self, pwl152_validated):
        sol = solve(pwl152_validated)
        dp = dp_solve(pwl152_validated, GridSpec(level_points=201))
        zero = type(dp)(
            schedule=type(dp.schedule)(levels=np.zeros(4)),
            objective=0.0,
            error_bound=dp.error_bound,
            lipschitz_bound=dp.lipschitz_bound,
        )
        assert not compare(sol, zero, tol=dp.error_bound).passed


def test_dp_never_beats_solver_on_randoms():
    rng = np.random.default_rng(77)
    for _ in range(25):
        inst = random_quad_instance(rng, max_T=8)
        vinst = validate_instance(inst)
        sol = solve(vinst)
        dp = dp_solve(vinst, GridSpec(level_points=161))
        assert dp.objective >= sol.objective - 1e-9
        assert abs(dp.objective - sol.objective) <= dp.error_bound


def test_dp_agrees_under_leakage():
    rng = np.random.default_rng(99)
    for rho in (0.9, 0.99):
        for _ in range(12):
            inst = random_quad_instance(rng, rho=rho, max_T=8)
            vinst = validate_instance(inst)
            sol = solve(vinst)
            dp = dp_solve(vinst, GridSpec(level_points=201))
            assert dp.objective >= sol.objective - 1e-9
            assert abs(dp.objective - sol.objective) <= dp.error_bound
