"""Stochastic layer: multiplicative cost uncertainty and receding-horizon control.

Costs evolve as C_t = xi_t * Cbar_t where the positive scales xi form a
martingale (the conditional mean of xi_t given the past equals xi_{t-1}).
Under that structure the stochastic optimum collapses to the deterministic
optimum of the base costs, node values scale by xi, and the optimal first
trade is scale-invariant; scenario_tree_dp and theorem6_check verify this
at grid resolution.  rolling_intrinsic is the pragmatic controller for the
general case: at each step it solves the deterministic problem on forecast
costs, commits only the next trade, charges it at the realised cost, and
re-plans.  The asymmetry — plan on forecasts, pay realised costs — is the
defining property of the policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costs import CostFunction, scale_cost
from .model import Instance, Schedule, StoreSpec, validate_instance
from .oracle import (
    BudgetExceeded,
    GridSpec,
    _dp_value_tables,
    _rate_slack,
    _stage_min,
    build_level_grid,
)
from .solver import SolverOptions, solve

__all__ = [
    "TreeNode",
    "ScenarioTree",
    "ScenarioPath",
    "generate_martingale_paths",
    "random_martingale_tree",
    "TreeDP",
    "scenario_tree_dp",
    "Theorem6Report",
    "theorem6_check",
    "Forecaster",
    "PerfectForesight",
    "ConditionalExpectation",
    "Backcast",
    "RollingResult",
    "rolling_intrinsic",
]

_MARTINGALE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TreeNode:
    """One scenario-tree node: its time, cost scale, and weighted children."""

    time: int
    xi: float
    children: tuple[tuple[float, "TreeNode"], ...] = ()


class ScenarioTree:
    """Scale scenarios on a finite tree over the full horizon.

    Every leaf sits at time T = len(base_costs); at each internal node the
    child probabilities sum to one and, unless validate_martingale is off,
    the probability-weighted child scales reproduce the node's scale.
    """

    def __init__(
        self,
        root: TreeNode,
        base_costs,
        validate_martingale: bool = True,
    ):
        self.root = root
        self.base_costs = tuple(base_costs)
        self.T = len(self.base_costs)
        if root.time != 0:
            raise ValueError("root must sit at time 0")
        if abs(root.xi - 1.0) > _MARTINGALE_TOL:
            raise ValueError("root scale must be 1")
        for node in self.nodes():
            if node.xi <= 0.0:
                raise ValueError(f"scale at time {node.time} must be > 0")
            if node.children:
                psum = sum(p for p, _ in node.children)
                if abs(psum - 1.0) > _MARTINGALE_TOL:
                    raise ValueError(f"child probabilities at time {node.time} sum to {psum}")
                for p, ch in node.children:
                    if p < 0 or ch.time != node.time + 1:
                        raise ValueError("children must be one step ahead with p >= 0")
                if validate_martingale:
                    mean = sum(p * ch.xi for p, ch in node.children)
                    if abs(mean - node.xi) > _MARTINGALE_TOL * max(1.0, node.xi):
                        raise ValueError(
                            f"scales at time {node.time + 1} break the martingale "
                            f"property: conditional mean {mean} != {node.xi}"
                        )
            elif node.time != self.T:
                raise ValueError(f"leaf at time {node.time}, expected {self.T}")

    def nodes(self) -> list[TreeNode]:
        out: list[TreeNode] = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(ch for _, ch in n.children)
        return out


@dataclass(frozen=True, eq=False)
class ScenarioPath:
    """One realised scale sequence xi_1..xi_T over fixed base costs."""

    scales: np.ndarray
    base_costs: tuple[CostFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float))
        object.__setattr__(self, "base_costs", tuple(self.base_costs))
        if len(self.scales) != len(self.base_costs):
            raise ValueError("scales and base costs must have equal length")
        if np.any(self.scales <= 0.0):
            raise ValueError("scales must be strictly positive")

    @property
    def T(self) -> int:
        return len(self.base_costs)

    def scale_at(self, t: int) -> float:
        """xi_t, with xi_0 = 1."""
        return 1.0 if t == 0 else float(self.scales[t - 1])

    def cost(self, t: int) -> CostFunction:
        return scale_cost(self.base_costs[t - 1], float(self.scales[t - 1]))


def generate_martingale_paths(
    base_costs, sigma: float, n_paths: int, seed: int
) -> list[ScenarioPath]:
    """Lognormal multiplicative scenarios: xi_t = xi_{t-1}*exp(sigma*Z - sigma^2/2)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    base = tuple(base_costs)
    T = len(base)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_paths):
        z = rng.standard_normal(T)
        scales = np.cumprod(np.exp(sigma * z - 0.5 * sigma * sigma))
        out.append(ScenarioPath(scales=scales, base_costs=base))
    return out


def random_martingale_tree(
    base_costs, depth: int | None = None, max_branching: int = 3,
    sigma: float = 0.3, seed: int = 0,
) -> ScenarioTree:
    """Random full-depth tree with exactly-renormalised martingale scales."""
    base = tuple(base_costs)
    T = len(base) if depth is None else depth
    if T != len(base):
        raise ValueError("tree depth must equal the number of base costs")
    rng = np.random.default_rng(seed)

    def grow(time: int, xi: float) -> TreeNode:
        if time == T:
            return TreeNode(time=time, xi=xi)
        k = int(rng.integers(1, max_branching + 1))
        probs = rng.dirichlet(np.ones(k))
        factors = np.exp(sigma * rng.standard_normal(k))
        factors /= float(np.dot(probs, factors))  # conditional mean exactly 1
        children = tuple(
            (float(p), grow(time + 1, xi * float(f))) for p, f in zip(probs, factors)
        )
        return TreeNode(time=time, xi=xi, children=children)

    return ScenarioTree(grow(0, 1.0), base)


@dataclass(frozen=True, eq=False)
class TreeDP:
    value: float
    first_stage_controls: tuple[float, ...]
    node_values: dict
    levels: np.ndarray


def scenario_tree_dp(tree: ScenarioTree, spec: StoreSpec, grid: GridSpec | None = None) -> TreeDP:
    """Backward induction over (node, level grid); the trade at each step may
    depend on the scale realised at that step."""
    if grid is None:
        grid = GridSpec()
    levels = build_level_grid(grid, spec)
    n = len(levels)
    node_list = tree.nodes()
    if len(node_list) * n * n > grid.dp_budget:
        raise BudgetExceeded(
            f"T*N^2 = {tree.T * n * n:.3g} exceeds dp budget {grid.dp_budget:.3g}"
        )
    slack = _rate_slack(spec)
    term = np.full(n, np.inf)
    term[int(np.argmin(np.abs(levels - spec.terminal_level)))] = 0.0

    values: dict = {}
    for node in sorted(node_list, key=lambda nd: -nd.time):
        if node.time == tree.T:
            values[node] = term
            continue
        acc = np.zeros(n)
        for p, ch in node.children:
            cost = scale_cost(tree.base_costs[node.time], ch.xi)
            acc = acc + p * _stage_min(
                levels, values[ch], cost, spec.leakage,
                spec.input_rate, spec.output_rate, slack,
            )
        values[node] = acc

    i0 = int(np.argmin(np.abs(levels - spec.initial_level)))
    s0 = levels[i0]
    firsts = []
    for p, ch in tree.root.children:
        cost = scale_cost(tree.base_costs[0], ch.xi)
        x = levels - spec.leakage * s0
        ok = (x >= -spec.output_rate - slack) & (x <= spec.input_rate + slack)
        tot = np.where(ok, cost.evaluate_array(x) + values[ch], np.inf)
        firsts.append(float(x[int(np.argmin(tot))]))
    return TreeDP(
        value=float(values[tree.root][i0]),
        first_stage_controls=tuple(firsts),
        node_values=values,
        levels=levels,
    )


@dataclass(frozen=True)
class Theorem6Report:
    value_gap: float
    worst_node_gap: float
    control_gap: float
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.value_gap <= self.tol
            and self.worst_node_gap <= self.tol
            and self.control_gap <= self.tol
        )


def theorem6_check(tree: ScenarioTree, spec: StoreSpec, grid: GridSpec | None = None,
                   tol: float = 1e-9) -> Theorem6Report:
    """Verify the martingale collapse at grid resolution: the tree value
    equals the deterministic base value, every node value is its scale times
    the deterministic value, and the optimal first trade is unchanged."""
    if grid is None:
        grid = GridSpec()
    sdp = scenario_tree_dp(tree, spec, grid)
    base_inst = validate_instance(Instance(spec=spec, costs=tree.base_costs))
    levels = sdp.levels
    V = _dp_value_tables(base_inst, levels)
    i0 = int(np.argmin(np.abs(levels - spec.initial_level)))
    det_value = float(V[0, i0])
    value_gap = abs(sdp.value - det_value)

    worst = 0.0
    for node, vals in sdp.node_values.items():
        expected = node.xi * V[node.time]
        both_finite = np.isfinite(vals) & np.isfinite(expected)
        if not np.array_equal(np.isfinite(vals), np.isfinite(expected)):
            worst = math.inf
            break
        if both_finite.any():
            worst = max(worst, float(np.max(np.abs(vals[both_finite] - expected[both_finite]))))

    # deterministic first trade from the same tables
    slack = _rate_slack(spec)
    s0 = levels[i0]
    x = levels - spec.leakage * s0
    ok = (x >= -spec.output_rate - slack) & (x <= spec.input_rate + slack)
    tot = np.where(ok, tree.base_costs[0].evaluate_array(x) + V[1], np.inf)
    x_det = float(x[int(np.argmin(tot))])
    control_gap = max(
        (abs(xc - x_det) for xc in sdp.first_stage_controls), default=0.0
    )
    return Theorem6Report(
        value_gap=value_gap, worst_node_gap=worst, control_gap=control_gap, tol=tol
    )


class Forecaster:
    """Maps (decision time, scenario seen up to that time) to deterministic
    future costs for steps t+1..T.  Implementations must only read the
    scenario up to time t, except PerfectForesight which deliberately peeks."""

    def forecast(self, t: int, scenario: ScenarioPath) -> list[CostFunction]:
        raise NotImplementedError


class PerfectForesight(Forecaster):
    def forecast(self, t, scenario):
        return [scenario.cost(u) for u in range(t + 1, scenario.T + 1)]


class ConditionalExpectation(Forecaster):
    """Expected future costs under the martingale model: the current scale
    times each base cost."""

    def forecast(self, t, scenario):
        xi = scenario.scale_at(t)
        return [scale_cost(c, xi) for c in scenario.base_costs[t:]]


class Backcast(Forecaster):
    """Repeat the trailing window of realised costs into the future.

    prehistory supplies costs for times 1-window..0 so the first
    re-optimisations have something to look back on.
    """

    def __init__(self, window: int, prehistory):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.prehistory = tuple(prehistory)
        if len(self.prehistory) < window:
            raise ValueError("prehistory must cover at least one window")

    def forecast(self, t, scenario):
        out = []
        for u in range(t + 1, scenario.T + 1):
            k = math.ceil((u - t) / self.window)
            src = u - k * self.window
            if src >= 1:
                out.append(scenario.cost(src))
            else:
                out.append(self.prehistory[src + self.window - 1])
        return out


@dataclass(frozen=True, eq=False)
class RollingResult:
    schedule: Schedule
    realized_cost: float
    committed: np.ndarray


def rolling_intrinsic(
    spec: StoreSpec,
    scenario: ScenarioPath,
    forecaster: Forecaster,
    options: SolverOptions | None = None,
) -> RollingResult:
    """Receding-horizon run: plan on forecast costs, commit one trade,
    charge it at the realised cost, advance, re-plan."""
    T = scenario.T
    levels = np.empty(T + 1)
    levels[0] = spec.initial_level
    committed = np.empty(T)
    total = 0.0
    s = spec.initial_level
    for t in range(T):
        future = forecaster.forecast(t, scenario)
        sub = Instance(
            spec=StoreSpec(
                capacity=spec.capacity,
                input_rate=spec.input_rate,
                output_rate=spec.output_rate,
                leakage=spec.leakage,
                initial_level=s,
                terminal_level=spec.terminal_level,
            ),
            costs=tuple(future),
        )
        sol = solve(validate_instance(sub), options)
        x = float(sol.schedule.controls[0])
        s = float(sol.schedule.levels[1])
        levels[t + 1] = s
        committed[t] = x
        total += scenario.cost(t + 1).evaluate(x)
    return RollingResult(
        schedule=Schedule(levels=levels, rho=spec.leakage),
        realized_cost=total,
        committed=committed,
    )
