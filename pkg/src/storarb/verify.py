"""Independent optimality certificate for a candidate plan and value vector.

check_kkt examines three conditions without trusting the solver: (i) the
plan is feasible; (ii) every trade minimises its own C_t(x) - mu_t*x over
the rate interval, measured both through the cost family's closed-form
response and through a dense grid so a response bug cannot certify itself;
(iii) the value vector satisfies rho*mu_{t+1} = mu_t at interior levels
with the one-sided inequalities at empty/full levels.

certify_value_gap turns any value vector into an unconditional upper bound
on a plan's suboptimality via weak duality, useful even when the
certificate fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FeasReport, Instance, Schedule, feasibility_check

__all__ = ["Certificate", "check_kkt", "certify_value_gap"]

_GRID_POINTS = 257

_NONUNIQUE_NOTE = (
    "value vectors are not unique: a failed certificate with one mu does not "
    "disprove optimality of the plan"
)


@dataclass(frozen=True, eq=False)
class Certificate:
    feasibility: FeasReport
    worst_feasibility_violation: float
    worst_response_slack: float
    worst_slackness_violation: float
    tolerance: float
    passed: bool
    response_slacks: np.ndarray
    slackness_violations: np.ndarray
    warnings: tuple[str, ...]
    notes: tuple[str, ...]


def check_kkt(
    instance: Instance,
    schedule: Schedule,
    multipliers,
    tol: float,
    boundary_band: float | None = None,
) -> Certificate:
    """Evaluate the three optimality conditions at tolerance tol.

    boundary_band controls which levels count as empty/full for the
    complementary-slackness inequalities; pass the band the plan was
    produced with (defaults to the model feasibility tolerance).
    """
    spec = instance.spec
    T = instance.T
    mu = np.asarray(multipliers, dtype=float)
    if schedule.T != T or len(mu) != T:
        raise ValueError("schedule/multiplier lengths do not match the instance")
    if boundary_band is None:
        boundary_band = spec.feasibility_tol

    feas = feasibility_check(spec, schedule, tol=0.0)
    worst_feas = feas.worst

    lo, hi = -spec.output_rate, spec.input_rate
    xs_grid = np.linspace(lo, hi, _GRID_POINTS)
    xs = schedule.controls
    slacks = np.empty(T)
    increasing = True
    for t in range(T):
        c = instance.costs[t]
        m = float(mu[t])
        val = c.evaluate(float(xs[t])) - m * xs[t]
        r_lo, r_hi = c.response(m, lo, hi)
        xr = 0.5 * (r_lo + r_hi)
        closed_min = c.evaluate(xr) - m * xr
        grid_min = float(np.min(c.evaluate_array(xs_grid) - m * xs_grid))
        # trusted and untrusted minima; report the larger slack so a buggy
        # response cannot hide a violation
        slacks[t] = max(val - closed_min, val - grid_min)
        if c.deriv_right(lo) < 0:
            increasing = False
    worst_slack = float(np.max(slacks))

    cs = np.zeros(max(T - 1, 0))
    rho = spec.leakage
    S = schedule.levels
    for t in range(1, T):
        d = rho * mu[t] - mu[t - 1]  # rho*mu_{t+1} - mu_t at level index t
        near_zero = abs(S[t]) <= boundary_band
        near_full = abs(S[t] - spec.capacity) <= boundary_band
        if near_zero and near_full:
            v = 0.0
        elif near_zero:
            v = max(0.0, d)
        elif near_full:
            v = max(0.0, -d)
        else:
            v = abs(d)
        cs[t - 1] = v
    worst_cs = float(np.max(cs)) if T > 1 else 0.0

    warnings: list[str] = []
    if increasing and float(mu.min()) < -tol:
        warnings.append(
            "negative reference values with increasing costs; a nonnegative "
            "vector satisfying the same conditions exists"
        )

    passed = worst_feas <= tol and worst_slack <= tol and worst_cs <= tol
    notes = () if passed else (_NONUNIQUE_NOTE,)
    return Certificate(
        feasibility=feas,
        worst_feasibility_violation=worst_feas,
        worst_response_slack=worst_slack,
        worst_slackness_violation=worst_cs,
        tolerance=tol,
        passed=passed,
        response_slacks=slacks,
        slackness_violations=cs,
        warnings=tuple(warnings),
        notes=notes,
    )


def certify_value_gap(instance: Instance, schedule: Schedule, multipliers) -> float:
    """Weak-duality bound on the plan's suboptimality, nonnegative for any
    feasible plan and any value vector; zero exactly at a certified optimum."""
    spec = instance.spec
    T = instance.T
    mu = np.asarray(multipliers, dtype=float)
    if schedule.T != T or len(mu) != T:
        raise ValueError("schedule/multiplier lengths do not match the instance")
    lo, hi = -spec.output_rate, spec.input_rate
    rho = spec.leakage

    dual = 0.0
    for t in range(T):
        c = instance.costs[t]
        m = float(mu[t])
        r_lo, r_hi = c.response(m, lo, hi)
        xr = 0.5 * (r_lo + r_hi)
        dual += c.evaluate(xr) - m * xr
    dual += mu[T - 1] * spec.terminal_level - rho * mu[0] * spec.initial_level
    for t in range(1, T):
        dual += min(0.0, spec.capacity * (mu[t - 1] - rho * mu[t]))

    value = 0.0
    xs = schedule.controls
    for t in range(T):
        value += instance.costs[t].evaluate(float(xs[t]))
    return value - dual
