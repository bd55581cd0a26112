"""Domain types for the storage arbitrage problem.

A plan over T steps is a vector of store levels S_0..S_T; the implied trade
at step t is x_t = S_t - rho*S_{t-1} where rho is the per-step retention
factor (a fraction 1-rho of the contents leaks away each step).  A plan is
feasible when interior levels stay inside [0, E], every trade respects the
rate interval [-P_o, P_i], and the boundary levels match the prescribed
initial and terminal values.

All types are immutable after construction and the operations here are
pure functions, so instances may be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .costs import CostFunction, KinkedQuadraticCost, sampled_convexity_ok

__all__ = [
    "BadSpec",
    "Infeasible",
    "StoreSpec",
    "Instance",
    "ValidatedInstance",
    "Schedule",
    "Violation",
    "FeasReport",
    "validate_instance",
    "objective",
    "feasibility_check",
    "reachable_bounds",
    "required_bounds",
]


class BadSpec(ValueError):
    """A store or instance violates a structural invariant."""


class Infeasible(RuntimeError):
    """No feasible plan exists; first_blocked_time is the earliest step at
    which the forward-reachable level interval leaves the band from which
    the terminal level can still be met."""

    def __init__(self, message: str, first_blocked_time: int | None = None):
        super().__init__(message)
        self.first_blocked_time = first_blocked_time


@dataclass(frozen=True)
class StoreSpec:
    """Physical store: capacity, rate bounds, leakage, boundary levels."""

    capacity: float
    input_rate: float
    output_rate: float
    leakage: float = 1.0
    initial_level: float = 0.0
    terminal_level: float = 0.0

    def __post_init__(self):
        if self.capacity < 0:
            raise BadSpec(f"capacity must be >= 0, got {self.capacity}")
        if self.input_rate < 0 or self.output_rate < 0:
            raise BadSpec("rate bounds must be >= 0")
        if self.input_rate + self.output_rate <= 0:
            raise BadSpec("store can never move: input_rate + output_rate must be > 0")
        if not 0.0 < self.leakage <= 1.0:
            raise BadSpec(f"leakage must be in (0, 1], got {self.leakage}")
        for name in ("initial_level", "terminal_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= self.capacity:
                raise BadSpec(f"{name}={v} outside [0, {self.capacity}]")

    @property
    def feasibility_tol(self) -> float:
        # absolute; the problem is scale-dependent in energy units
        return 1e-9 * max(self.capacity, self.input_rate + self.output_rate)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Store-level path S_0..S_T with its implied trades."""

    levels: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=float))
        if self.levels.ndim != 1 or len(self.levels) < 2:
            raise BadSpec("levels must be a 1-d sequence S_0..S_T with T >= 1")

    @property
    def T(self) -> int:
        return len(self.levels) - 1

    @cached_property
    def controls(self) -> np.ndarray:
        return self.levels[1:] - self.rho * self.levels[:-1]

    @classmethod
    def from_controls(cls, initial_level: float, controls: Sequence[float], rho: float = 1.0) -> "Schedule":
        xs = np.asarray(controls, dtype=float)
        levels = np.empty(len(xs) + 1)
        levels[0] = initial_level
        s = initial_level
        for i, x in enumerate(xs):
            s = rho * s + x
            levels[i + 1] = s
        return cls(levels=levels, rho=rho)


@dataclass(frozen=True)
class Instance:
    """A store plus its per-step convex cost functions."""

    spec: StoreSpec
    costs: tuple[CostFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "costs", tuple(self.costs))
        if len(self.costs) < 1:
            raise BadSpec("need at least one time step")
        lo, hi = -self.spec.output_rate, self.spec.input_rate
        for t, c in enumerate(self.costs, start=1):
            if not sampled_convexity_ok(c, lo, hi):
                raise BadSpec(f"cost function at t={t} is not convex on [{lo}, {hi}]")

    @property
    def T(self) -> int:
        return len(self.costs)

    @cached_property
    def kq_params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None:
        """Coefficient arrays (slope_pos, slope_neg, curv_pos, curv_neg) when
        every cost is a kinked quadratic; None otherwise."""
        if not all(isinstance(c, KinkedQuadraticCost) for c in self.costs):
            return None
        sp = np.array([c.slope_pos for c in self.costs])
        sn = np.array([c.slope_neg for c in self.costs])
        cp = np.array([c.curv_pos for c in self.costs])
        cn = np.array([c.curv_neg for c in self.costs])
        return sp, sn, cp, cn


@dataclass(frozen=True, eq=False)
class ValidatedInstance:
    """An instance known to admit at least one feasible plan."""

    instance: Instance
    reach_lo: np.ndarray
    reach_hi: np.ndarray

    @property
    def spec(self) -> StoreSpec:
        return self.instance.spec

    @property
    def T(self) -> int:
        return self.instance.T


def reachable_bounds(spec: StoreSpec, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward-propagated level interval [lo_t, hi_t] reachable from S_0."""
    lo = np.empty(T + 1)
    hi = np.empty(T + 1)
    lo[0] = hi[0] = spec.initial_level
    for t in range(1, T + 1):
        lo[t] = max(0.0, spec.leakage * lo[t - 1] - spec.output_rate)
        hi[t] = min(spec.capacity, spec.leakage * hi[t - 1] + spec.input_rate)
    return lo, hi


def required_bounds(spec: StoreSpec, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Backward-propagated band [a_t, b_t] from which S_T* is still reachable."""
    a = np.empty(T + 1)
    b = np.empty(T + 1)
    a[T] = b[T] = spec.terminal_level
    for t in range(T - 1, -1, -1):
        a[t] = max(0.0, (a[t + 1] - spec.input_rate) / spec.leakage)
        b[t] = min(spec.capacity, (b[t + 1] + spec.output_rate) / spec.leakage)
    return a, b


def validate_instance(instance: Instance) -> ValidatedInstance:
    """Check that a feasible plan exists and return the validated wrapper."""
    spec = instance.spec
    T = instance.T
    lo, hi = reachable_bounds(spec, T)
    tol = spec.feasibility_tol
    if not (lo[T] - tol <= spec.terminal_level <= hi[T] + tol):
        a, b = required_bounds(spec, T)
        blocked = T
        for t in range(1, T + 1):
            if lo[t] > b[t] + tol or hi[t] < a[t] - tol:
                blocked = t
                break
        raise Infeasible(
            f"terminal level {spec.terminal_level} unreachable "
            f"(reachable interval at T is [{lo[T]:.6g}, {hi[T]:.6g}]); "
            f"first blocked time {blocked}",
            first_blocked_time=blocked,
        )
    return ValidatedInstance(instance=instance, reach_lo=lo, reach_hi=hi)


def objective(instance: Instance, schedule: Schedule) -> float:
    """Total cost of a plan; does not require feasibility (trial paths allowed)."""
    if schedule.T != instance.T:
        raise BadSpec(f"schedule has {schedule.T} steps, instance has {instance.T}")
    xs = schedule.controls
    params = instance.kq_params
    if params is not None:
        sp, sn, cp, cn = params
        vals = np.where(xs >= 0.0, (sp + cp * xs) * xs, (sn + cn * xs) * xs)
        return float(np.sum(vals))
    return float(sum(c.evaluate(float(x)) for c, x in zip(instance.costs, xs)))


@dataclass(frozen=True)
class Violation:
    kind: str  # initial | terminal | capacity_low | capacity_high | rate_low | rate_high
    time: int
    magnitude: float


@dataclass(frozen=True)
class FeasReport:
    violations: tuple[Violation, ...]
    tol: float

    @property
    def feasible(self) -> bool:
        return len(self.violations) == 0

    @property
    def worst(self) -> float:
        return max((v.magnitude for v in self.violations), default=0.0)


def feasibility_check(spec: StoreSpec, schedule: Schedule, tol: float | None = None) -> FeasReport:
    """List every violated constraint (kind, time, magnitude) at tolerance tol."""
    if tol is None:
        tol = spec.feasibility_tol
    if tol < 0:
        raise BadSpec("tol must be >= 0")
    out: list[Violation] = []
    S = schedule.levels
    T = schedule.T
    d0 = abs(S[0] - spec.initial_level)
    if d0 > tol:
        out.append(Violation("initial", 0, d0))
    for t in range(1, T + 1):
        if S[t] < -tol:
            out.append(Violation("capacity_low", t, -S[t]))
        if S[t] > spec.capacity + tol:
            out.append(Violation("capacity_high", t, S[t] - spec.capacity))
    dT = abs(S[T] - spec.terminal_level)
    if dT > tol:
        out.append(Violation("terminal", T, dT))
    xs = schedule.controls
    for t in range(1, T + 1):
        x = xs[t - 1]
        if x > spec.input_rate + tol:
            out.append(Violation("rate_high", t, x - spec.input_rate))
        if x < -spec.output_rate - tol:
            out.append(Violation("rate_low", t, -spec.output_rate - x))
    return FeasReport(violations=tuple(out), tol=tol)
