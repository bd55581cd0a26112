import numpy as np
import pytest

from storarb import (
    Infeasible,
    Instance,
    SolverOptions,
    StoreSpec,
    dV_dE,
    dV_dPi,
    dV_dPo,
    finite_difference_check,
    sensitivity_report,
    solve,
    validate_instance,
)
from storarb.costs import PriceImpactParams, quadratic_impact_cost

from conftest import pwl_instance, random_quad_instance

TIGHT = SolverOptions(mu_tolerance=1e-11)


def _two_step_quad(capacity, p_in, p_out):
    costs = tuple(
        quadratic_impact_cost(PriceImpactParams(p, 0.25, 1.0)) for p in (1.0, 3.0)
    )
    spec = StoreSpec(capacity=capacity, input_rate=p_in, output_rate=p_out)
    return Instance(spec=spec, costs=costs)


class TestWorkedValues:
    def test_capacity_derivative_is_minus_one(self):
        # V(E) = -2E + E^2/2 for the capacity-bound trade, so V'(1) = -1
        inst = _two_step_quad(1.0, 5.0, 5.0)
        sol = solve(validate_instance(inst), TIGHT)
        assert dV_dE(inst, sol) == pytest.approx(-1.0, abs=1e-6)
        fd = finite_difference_check(inst, 1e-4, "E", TIGHT)
        assert fd.abs_gap <= 1e-4
        assert abs(fd.central_difference - (-1.0)) <= 1e-4

    def test_input_rate_derivative_is_minus_one(self):
        inst = _two_step_quad(10.0, 1.0, 5.0)
        sol = solve(validate_instance(inst), TIGHT)
        rep = sensitivity_report(inst, sol)
        assert rep.binding_input == (1,)
        assert rep.dV_dPi == pytest.approx(-1.0, abs=1e-6)
        fd = finite_difference_check(inst, 1e-4, "Pi", TIGHT)
        assert abs(fd.central_difference - rep.dV_dPi) <= 1e-4

    def test_output_rate_derivative_is_minus_one(self):
        inst = _two_step_quad(10.0, 5.0, 1.0)
        sol = solve(validate_instance(inst), TIGHT)
        rep = sensitivity_report(inst, sol)
        assert rep.binding_output == (2,)
        assert rep.dV_dPo == pytest.approx(-1.0, abs=1e-6)
        fd = finite_difference_check(inst, 1e-4, "Po", TIGHT)
        assert abs(fd.central_difference - rep.dV_dPo) <= 1e-4

    def test_just_touching_capacity_gives_zero(self):
        # at E=2 the unconstrained trade x=(2,-2) touches the ceiling with a
        # continuous value vector, so the capacity derivative vanishes
        inst = _two_step_quad(2.0, 5.0, 5.0)
        sol = solve(validate_instance(inst), TIGHT)
        assert np.allclose(sol.schedule.controls, [2.0, -2.0], atol=1e-6)
        rep = sensitivity_report(inst, sol)
        assert abs(rep.dV_dE) <= 1e-8

    def test_slack_capacity_gives_zero(self):
        inst = _two_step_quad(2.2, 5.0, 5.0)
        sol = solve(validate_instance(inst), TIGHT)
        assert np.allclose(sol.schedule.controls, [2.0, -2.0], atol=1e-6)
        rep = sensitivity_report(inst, sol)
        assert rep.binding_capacity == ()
        assert rep.dV_dE == 0.0

    def test_unconstrained_rates_give_zero(self):
        inst = _two_step_quad(10.0, 50.0, 50.0)
        sol = solve(validate_instance(inst), TIGHT)
        rep = sensitivity_report(inst, sol)
        assert rep.dV_dPi == 0.0 and rep.dV_dPo == 0.0


class TestWarnings:
    def test_ambiguous_value_vector_flags_differentiability(self):
        # buy at 1, sell at 5 with nothing pinning mu in between: the whole
        # interval [1, 5] certifies, so the rate formulas are unreliable
        inst = pwl_instance([1.0, 5.0], capacity=10.0, rate=1.0)
        sol = solve(validate_instance(inst), SolverOptions(mu_tolerance=1e-11))
        rep = sensitivity_report(inst, sol)
        assert rep.binding_input and rep.binding_output
        assert any("under-determined" in w for w in rep.warnings)

    def test_pinned_value_vector_stays_quiet(self, pwl152):
        # the zero trade at the third step pins mu at 2, so no ambiguity
        sol = solve(validate_instance(pwl152), SolverOptions(mu_tolerance=1e-11))
        rep = sensitivity_report(pwl152, sol)
        assert not any("under-determined" in w for w in rep.warnings)

    def test_equal_rate_and_capacity_degeneracy(self):
        # E = P = 1: the trade saturates both bounds at once and the value
        # vector is an interval, so the formulas cannot be trusted
        inst = _two_step_quad(1.0, 1.0, 1.0)
        sol = solve(validate_instance(inst), TIGHT)
        rep = sensitivity_report(inst, sol)
        assert rep.warnings

    def test_fd_report_carries_warnings(self, pwl152):
        fd = finite_difference_check(pwl152, 1e-5, "E", SolverOptions(mu_tolerance=1e-11))
        assert isinstance(fd.warnings, tuple)

    def test_fd_infeasible_perturbation(self):
        inst = _two_step_quad(1.0, 5.0, 5.0)
        inst = Instance(
            spec=StoreSpec(capacity=1.0, input_rate=5.0, output_rate=5.0,
                           initial_level=1.0, terminal_level=1.0),
            costs=inst.costs,
        )
        with pytest.raises(Infeasible):
            finite_difference_check(inst, 0.5, "E", TIGHT)


def test_signs_never_positive_on_certified_solutions():
    rng = np.random.default_rng(19)
    for _ in range(20):
        inst = random_quad_instance(rng)
        sol = solve(validate_instance(inst), TIGHT)
        rep = sensitivity_report(inst, sol)
        tol = 1e-6 * max(1.0, float(np.max(np.abs(sol.multipliers))))
        assert rep.dV_dE <= tol
        assert rep.dV_dPi <= tol
        assert rep.dV_dPo <= tol


def test_fd_agreement_on_smooth_nondegenerate_instances():
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 12:
        inst = random_quad_instance(rng, max_T=7)
        sol = solve(validate_instance(inst), TIGHT)
        rep = sensitivity_report(inst, sol)
        if rep.warnings:
            continue
        h = 1e-4 * max(inst.spec.capacity, 1.0)
        spec = inst.spec
        if spec.initial_level > spec.capacity - h or spec.terminal_level > spec.capacity - h:
            continue
        try:
            fd = finite_difference_check(inst, h, "E", TIGHT)
        except Infeasible:
            continue
        base = solve(validate_instance(inst), TIGHT)
        assert fd.abs_gap <= max(1e-4 * abs(base.objective), 1e-6) + 1e-9
        checked += 1
