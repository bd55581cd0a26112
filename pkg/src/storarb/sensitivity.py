"""Derivatives of the optimal operating cost in the store's constraints.

Given a certified plan and its value vector, the marginal effect of
relaxing the capacity is the sum of value drops across full-store times,
and the marginal effect of relaxing a rate bound is the sum of (marginal
trade cost minus reference value) across times where that bound binds.
A finite-difference harness re-solves perturbed instances as a cross-check.

The formulas assume the optimal cost is differentiable in the bound being
varied; when the plan leaves the value vector under-determined (kinked
costs at the traded point, or capacity and rate bounds binding together)
the report carries differentiability warnings and the formula values
should be replaced by one-sided finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import BadSpec, Infeasible, Instance, validate_instance
from .solver import Solution, SolverOptions, solve

__all__ = [
    "SensitivityReport",
    "FDReport",
    "sensitivity_report",
    "dV_dE",
    "dV_dPi",
    "dV_dPo",
    "finite_difference_check",
]


@dataclass(frozen=True)
class SensitivityReport:
    dV_dE: float
    dV_dPi: float
    dV_dPo: float
    binding_capacity: tuple[int, ...]
    binding_input: tuple[int, ...]
    binding_output: tuple[int, ...]
    warnings: tuple[str, ...]


@dataclass(frozen=True)
class FDReport:
    which: str
    formula: float
    central_difference: float
    abs_gap: float
    rel_gap: float
    step: float
    warnings: tuple[str, ...]


def _binding_sets(instance: Instance, solution: Solution, band: float):
    spec = instance.spec
    S = solution.schedule.levels
    xs = solution.schedule.controls
    T = instance.T
    cap = tuple(t for t in range(1, T) if abs(S[t] - spec.capacity) <= band)
    rin = tuple(t for t in range(1, T + 1) if abs(xs[t - 1] - spec.input_rate) <= band)
    rout = tuple(t for t in range(1, T + 1) if abs(xs[t - 1] + spec.output_rate) <= band)
    return cap, rin, rout


def _mu_freedom_warnings(instance: Instance, solution: Solution, band: float,
                         cap, rin, rout) -> list[str]:
    """Flag segments whose reference value is not pinned down by the traded
    points while a binding set intersects them; the sensitivity formulas
    are unreliable there."""
    spec = instance.spec
    rho = spec.leakage
    tol = 1e-9 * max(1.0, float(np.max(np.abs(solution.multipliers))))
    warnings: list[str] = []
    binding = set(cap) | set(rin) | set(rout)
    start = 0
    for end in solution.segment_ends:
        lo_mu, hi_mu = -np.inf, np.inf
        for t in range(start + 1, end + 1):
            c = instance.costs[t - 1]
            x = float(solution.schedule.controls[t - 1])
            scale = rho ** (t - start - 1)  # map step-t bounds onto mu_bar
            if x >= spec.input_rate - band:
                lo_mu = max(lo_mu, c.deriv_left(x) * scale)
            elif x <= -spec.output_rate + band:
                hi_mu = min(hi_mu, c.deriv_right(x) * scale)
            else:
                lo_mu = max(lo_mu, c.deriv_left(x) * scale)
                hi_mu = min(hi_mu, c.deriv_right(x) * scale)
        ambiguous = hi_mu - lo_mu > tol
        if ambiguous and any(start < t <= end for t in binding):
            warnings.append(
                f"reference value under-determined on segment ending at {end}; "
                "formula sensitivities may not match one-sided derivatives"
            )
        start = end
    for t in cap:
        if t in rin or t in rout:
            warnings.append(
                f"capacity and rate bounds bind together at t={t}; "
                "the optimal cost may be kinked there"
            )
    return warnings


def sensitivity_report(
    instance: Instance, solution: Solution, band: float | None = None
) -> SensitivityReport:
    """All three constraint derivatives with their binding sets."""
    spec = instance.spec
    if band is None:
        band = solution.boundary_band
    mu = solution.multipliers
    rho = spec.leakage
    cap, rin, rout = _binding_sets(instance, solution, band)
    warnings = _mu_freedom_warnings(instance, solution, band, cap, rin, rout)

    dE = 0.0
    sign_tol = 1e-9 * max(1.0, float(np.max(np.abs(mu))))
    for t in cap:
        term = mu[t - 1] - rho * mu[t]
        if term > sign_tol:
            warnings.append(
                f"capacity summand at t={t} is positive ({term:.3g}); "
                "relaxing the bound should never raise cost"
            )
        dE += term

    dPi = 0.0
    dPo = 0.0
    x_hi = spec.input_rate
    x_lo = -spec.output_rate
    for t in rin:
        c = instance.costs[t - 1]
        dl, dr = c.deriv_left(x_hi), c.deriv_right(x_hi)
        if abs(dr - dl) > sign_tol:
            warnings.append(f"cost at t={t} is kinked at the input rate bound")
        dPi += dl - mu[t - 1]
    for t in rout:
        c = instance.costs[t - 1]
        dl, dr = c.deriv_left(x_lo), c.deriv_right(x_lo)
        if abs(dr - dl) > sign_tol:
            warnings.append(f"cost at t={t} is kinked at the output rate bound")
        dPo += mu[t - 1] - dr

    return SensitivityReport(
        dV_dE=dE,
        dV_dPi=dPi,
        dV_dPo=dPo,
        binding_capacity=cap,
        binding_input=rin,
        binding_output=rout,
        warnings=tuple(warnings),
    )


def dV_dE(instance: Instance, solution: Solution) -> float:
    return sensitivity_report(instance, solution).dV_dE


def dV_dPi(instance: Instance, solution: Solution) -> float:
    return sensitivity_report(instance, solution).dV_dPi


def dV_dPo(instance: Instance, solution: Solution) -> float:
    return sensitivity_report(instance, solution).dV_dPo


def _perturbed(instance: Instance, which: str, delta: float) -> Instance:
    spec = instance.spec
    try:
        if which == "E":
            new = replace(spec, capacity=spec.capacity + delta)
        elif which == "Pi":
            new = replace(spec, input_rate=spec.input_rate + delta)
        elif which == "Po":
            new = replace(spec, output_rate=spec.output_rate + delta)
        else:
            raise ValueError(f"which must be 'E', 'Pi' or 'Po', got {which!r}")
    except BadSpec as exc:
        raise Infeasible(f"perturbed instance is invalid: {exc}") from exc
    return Instance(spec=new, costs=instance.costs)


def finite_difference_check(
    instance: Instance,
    h: float,
    which: str,
    options: SolverOptions | None = None,
) -> FDReport:
    """Central finite difference of the re-solved optimum against the formula.

    Raises Infeasible when a perturbed instance loses feasibility (for
    capacity, the boundary levels must stay below E - h).
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    base = solve(validate_instance(instance), options)
    report = sensitivity_report(instance, base)
    formula = {"E": report.dV_dE, "Pi": report.dV_dPi, "Po": report.dV_dPo}[which]

    up = solve(validate_instance(_perturbed(instance, which, +h)), options)
    dn = solve(validate_instance(_perturbed(instance, which, -h)), options)
    fd = (up.objective - dn.objective) / (2.0 * h)
    gap = abs(formula - fd)
    rel = gap / max(abs(formula), abs(fd), 1e-30)
    return FDReport(
        which=which,
        formula=formula,
        central_difference=fd,
        abs_gap=gap,
        rel_gap=rel,
        step=h,
        warnings=report.warnings,
    )
