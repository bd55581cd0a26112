"""Brute-force reference solvers used to validate the segment solver.

``dp_solve`` runs backward value iteration on a uniform level grid; grid
paths are genuine feasible plans, so its objective can never beat the
continuum optimum, and it overshoots by at most a grid-resolution bound
that is reported alongside the value.  ``exhaustive_solve`` enumerates
control tuples on a small grid and is the ground truth for desk-scale
fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostFunction
from .model import (
    Infeasible,
    Instance,
    Schedule,
    ValidatedInstance,
    objective as recompute_objective,
    validate_instance,
)

__all__ = [
    "BudgetExceeded",
    "GridSpec",
    "OracleSolution",
    "ComparisonReport",
    "build_level_grid",
    "cost_lipschitz_bound",
    "dp_solve",
    "exhaustive_solve",
    "compare",
]

# slack on exact rate comparisons so grid/float dust cannot exclude a
# boundary trade; small enough that it cannot beat the continuum optimum
# by more than ~1e-10 in cost
_RATE_SLACK_ULPS = 32.0


class BudgetExceeded(RuntimeError):
    """The requested oracle run is larger than its configured budget."""


@dataclass(frozen=True)
class GridSpec:
    """Level-grid resolution and work budgets for the oracle solvers."""

    level_points: int = 201
    dp_budget: float = 5e7  # max T * N^2
    exhaustive_budget: float = 5e6  # max number of control tuples

    def __post_init__(self):
        if self.level_points < 2:
            raise ValueError("level_points must be >= 2")


@dataclass(frozen=True, eq=False)
class OracleSolution:
    schedule: Schedule
    objective: float
    error_bound: float
    lipschitz_bound: float


@dataclass(frozen=True)
class ComparisonReport:
    objective_gap: float
    max_level_gap: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.objective_gap <= self.tol


def build_level_grid(grid: GridSpec, spec) -> np.ndarray:
    """Uniform grid on [0, E] with 0, E, S_0* and S_T* included exactly."""
    pts = np.linspace(0.0, spec.capacity, grid.level_points)
    pts = np.union1d(pts, [spec.initial_level, spec.terminal_level])
    return pts


def cost_lipschitz_bound(instance: Instance) -> float:
    """Bound on |C_t'| over the rate interval, attained at an endpoint for
    convex costs."""
    hi = instance.spec.input_rate
    lo = -instance.spec.output_rate
    worst = 0.0
    for c in instance.costs:
        worst = max(worst, abs(c.deriv_left(hi)), abs(c.deriv_right(lo)))
    return worst


def _rate_slack(spec) -> float:
    return _RATE_SLACK_ULPS * np.finfo(float).eps * max(
        spec.capacity, spec.input_rate + spec.output_rate
    )


def _stage_min(
    levels: np.ndarray,
    v_next: np.ndarray,
    cost: CostFunction,
    rho: float,
    p_in: float,
    p_out: float,
    slack: float,
) -> np.ndarray:
    """One backward step: best cost-to-go at each grid level."""
    x = levels[None, :] - rho * levels[:, None]
    ok = (x >= -p_out - slack) & (x <= p_in + slack)
    vals = cost.evaluate_array(x) + v_next[None, :]
    vals = np.where(ok, vals, np.inf)
    return vals.min(axis=1)


def _dp_value_tables(vinst: ValidatedInstance, levels: np.ndarray) -> np.ndarray:
    """Value table V[t, i] = optimal cost-to-go from level levels[i] at time t."""
    spec = vinst.spec
    T = vinst.T
    n = len(levels)
    slack = _rate_slack(spec)
    V = np.full((T + 1, n), np.inf)
    term_idx = int(np.argmin(np.abs(levels - spec.terminal_level)))
    V[T, term_idx] = 0.0
    for t in range(T, 0, -1):
        V[t - 1] = _stage_min(
            levels, V[t], vinst.instance.costs[t - 1], spec.leakage,
            spec.input_rate, spec.output_rate, slack,
        )
    return V


def dp_solve(instance: Instance | ValidatedInstance, grid: GridSpec | None = None) -> OracleSolution:
    """Backward value iteration on the level grid plus forward recovery.

    The objective exceeds the continuum optimum by at most
    L * T * E / (N_S - 1), reported as error_bound.
    """
    if grid is None:
        grid = GridSpec()
    vinst = instance if isinstance(instance, ValidatedInstance) else validate_instance(instance)
    spec = vinst.spec
    T = vinst.T
    levels = build_level_grid(grid, spec)
    n = len(levels)
    if T * n * n > grid.dp_budget:
        raise BudgetExceeded(
            f"T*N^2 = {T * n * n:.3g} exceeds dp budget {grid.dp_budget:.3g}"
        )
    V = _dp_value_tables(vinst, levels)
    start_idx = int(np.argmin(np.abs(levels - spec.initial_level)))
    if not np.isfinite(V[0, start_idx]):
        raise Infeasible(
            "no grid-feasible path; refine the level grid", first_blocked_time=None
        )
    slack = _rate_slack(spec)
    path = np.empty(T + 1)
    path[0] = levels[start_idx]
    s = levels[start_idx]
    for t in range(1, T + 1):
        x = levels - spec.leakage * s
        ok = (x >= -spec.output_rate - slack) & (x <= spec.input_rate + slack)
        vals = vinst.instance.costs[t - 1].evaluate_array(x) + V[t]
        vals = np.where(ok, vals, np.inf)
        j = int(np.argmin(vals))
        s = levels[j]
        path[t] = s
    schedule = Schedule(levels=path, rho=spec.leakage)
    obj = recompute_objective(vinst.instance, schedule)
    lip = cost_lipschitz_bound(vinst.instance)
    bound = lip * T * spec.capacity / (grid.level_points - 1)
    return OracleSolution(schedule=schedule, objective=obj, error_bound=bound, lipschitz_bound=lip)


def exhaustive_solve(
    instance: Instance | ValidatedInstance,
    control_grid_points: int,
    budget: float = 5e6,
) -> OracleSolution:
    """Enumerate every control tuple on the grid and keep the best feasible one.

    The grid always contains the zero trade.  Terminal matching uses the
    model feasibility tolerance, so with leakage prefer dp_solve unless the
    grid hits the terminal level exactly.
    """
    vinst = instance if isinstance(instance, ValidatedInstance) else validate_instance(instance)
    spec = vinst.spec
    T = vinst.T
    grid = np.union1d(
        np.linspace(-spec.output_rate, spec.input_rate, control_grid_points), [0.0]
    )
    m = len(grid)
    total = float(m) ** T
    if total > budget:
        raise BudgetExceeded(f"{m}^{T} = {total:.3g} tuples exceeds budget {budget:.3g}")

    tol = spec.feasibility_tol
    best_obj = np.inf
    best_controls: np.ndarray | None = None
    chunk = 1 << 14
    idx = np.arange(int(total))
    for lo in range(0, int(total), chunk):
        sel = idx[lo : lo + chunk]
        digits = np.empty((len(sel), T), dtype=int)
        rem = sel.copy()
        for t in range(T - 1, -1, -1):
            digits[:, t] = rem % m
            rem //= m
        xs = grid[digits]  # (rows, T)
        s = np.full(len(sel), spec.initial_level)
        ok = np.ones(len(sel), dtype=bool)
        for t in range(T):
            s = spec.leakage * s + xs[:, t]
            if t < T - 1:
                ok &= (s >= -tol) & (s <= spec.capacity + tol)
        ok &= np.abs(s - spec.terminal_level) <= tol
        if not ok.any():
            continue
        cand = xs[ok]
        costs = np.zeros(len(cand))
        for t in range(T):
            costs += vinst.instance.costs[t].evaluate_array(cand[:, t])
        j = int(np.argmin(costs))
        if costs[j] < best_obj:
            best_obj = float(costs[j])
            best_controls = cand[j]
    if best_controls is None:
        raise Infeasible("no feasible control tuple on the grid", first_blocked_time=None)
    schedule = Schedule.from_controls(spec.initial_level, best_controls, spec.leakage)
    lip = cost_lipschitz_bound(vinst.instance)
    step = (spec.input_rate + spec.output_rate) / max(m - 1, 1)
    return OracleSolution(
        schedule=schedule,
        objective=best_obj,
        error_bound=lip * T * step,
        lipschitz_bound=lip,
    )


def compare(a, b, tol: float) -> ComparisonReport:
    """Objective and level deviation between two solutions of one instance."""
    gap = abs(float(a.objective) - float(b.objective))
    la, lb = np.asarray(a.schedule.levels), np.asarray(b.schedule.levels)
    level_gap = float(np.max(np.abs(la - lb))) if la.shape == lb.shape else np.inf
    return ComparisonReport(objective_gap=gap, max_level_gap=level_gap, tol=tol)
