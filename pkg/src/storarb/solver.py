"""Sequential reference-value construction of the optimal storage plan.

The optimal plan is built segment by segment.  Within a segment the per-step
reference value mu is constant up to leakage rescaling (rho*mu_{t+1} = mu_t)
and each trade is the rate-constrained minimiser of C_t(x) - mu_t*x.  A
scalar search brackets the segment's mu between a value whose simulated path
first breaks a capacity bound from below and one breaking from above, then
bisects until the bracket is tight in mu and the two paths agree to within
the level band.  The surviving path is committed up to the step where it
pinches the binding boundary; that level is snapped exactly onto the
boundary and the construction restarts there.  Each restart makes at least
one step of progress, so a solve is a single forward sweep whose per-step
work depends only on the distance to the next boundary event, not on the
total horizon.

Solves are single-threaded and deterministic; distinct solves on shared
immutable instances may run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .costs import KinkedQuadraticCost
from .model import (
    Instance,
    Schedule,
    ValidatedInstance,
    objective as recompute_objective,
    validate_instance,
)

__all__ = [
    "SolverError",
    "BracketFailure",
    "NoConvergence",
    "PathTag",
    "PathClass",
    "SolverOptions",
    "SegmentResult",
    "Solution",
    "classify_path",
    "advance_segment",
    "solve",
    "horizon_profile",
]

_HUGE_MU = 1e300
_SCALAR_PREFIX = 48
_FLOAT_EPS = float(np.finfo(float).eps)


class SolverError(RuntimeError):
    pass


class BracketFailure(SolverError):
    """No opposite-violation bracket was found within the growth limit."""


class NoConvergence(SolverError):
    """Bisection exhausted its iteration budget or the bracket degenerated."""


class PathTag(Enum):
    FEASIBLE = "feasible"
    LOWER_VIOLATION = "lower"
    UPPER_VIOLATION = "upper"


@dataclass(frozen=True)
class PathClass:
    """Outcome of simulating the constant-mu path: feasible, or the first
    time it leaves the capacity band and in which direction."""

    tag: PathTag
    violation_time: int | None = None


@dataclass(frozen=True)
class SolverOptions:
    """Numerical knobs for the segment search.

    mu_tolerance: bisection width target in value units; default is
        1e-9 times the global derivative spread.
    regularization: added curvature for non-strictly-convex costs; None
        picks the default 1e-8 * median price / max rate, 0.0 disables it.
    level_band: boundary snapping band in energy units; default is derived
        from mu_tolerance and the response sensitivity, clamped to sane
        fractions of the energy scale.
    """

    mu_tolerance: float | None = None
    bracket_growth: float = 4.0
    max_bisection_iters: int = 200
    regularization: float | None = None
    level_band: float | None = None
    max_bracket_growths: int = 80

    def __post_init__(self):
        if self.mu_tolerance is not None and self.mu_tolerance <= 0:
            raise ValueError("mu_tolerance must be > 0")
        if self.bracket_growth <= 1:
            raise ValueError("bracket_growth must be > 1")
        if self.max_bisection_iters < 1:
            raise ValueError("max_bisection_iters must be >= 1")
        if self.regularization is not None and self.regularization < 0:
            raise ValueError("regularization must be >= 0")


@dataclass(frozen=True, eq=False)
class SegmentResult:
    """One committed segment: its reference value (anchored at the first
    control step), the touch time ending it, the horizon that determined
    it, and the committed level prefix."""

    mu_bar: float
    segment_end: int
    horizon: int
    levels: np.ndarray


@dataclass(frozen=True, eq=False)
class Solution:
    schedule: Schedule
    multipliers: np.ndarray
    segment_ends: tuple[int, ...]
    horizons: tuple[int, ...]
    objective: float
    boundary_band: float
    segment_mu: tuple[float, ...]


class _Sim(NamedTuple):
    tag: PathTag
    tbar: int | None
    path: np.ndarray  # levels S_{t0+1} .. S_{min(tbar, T)}


class _Work:
    """Prepared solve context: regularized cost coefficients, tolerances,
    and the vectorized path simulator."""

    def __init__(self, vinst: ValidatedInstance, options: SolverOptions):
        inst = vinst.instance
        spec = inst.spec
        self.vinst = vinst
        self.options = options
        self.T = inst.T
        self.E = spec.capacity
        self.Pi = spec.input_rate
        self.Po = spec.output_rate
        self.rho = spec.leakage
        self.S0 = spec.initial_level
        self.ST = spec.terminal_level

        params = inst.kq_params
        delta = options.regularization
        if delta is None:
            if all(c.strictly_convex for c in inst.costs):
                delta = 0.0
            else:
                mags = np.array(
                    [max(abs(c.deriv_right(0.0)), abs(c.deriv_left(0.0))) for c in inst.costs]
                )
                med = float(np.median(mags))
                if med <= 0.0:
                    med = max(float(mags.max()), 1.0)
                delta = 1e-8 * med / max(self.Pi, self.Po)
        self.delta = delta

        self.costs_reg = None
        if params is not None:
            sp, sn, cp, cn = params
            self.sp = sp.copy()
            self.sn = sn.copy()
            self.cp = cp + delta
            self.cn = cn + delta
            self.vector_ok = bool(self.cp.min() > 0.0 and self.cn.min() > 0.0)
            if not self.vector_ok:
                self.costs_reg = [
                    c.regularized(delta) if delta > 0 else c for c in inst.costs
                ]
        else:
            self.vector_ok = False
            self.costs_reg = [
                c.regularized(delta) if delta > 0 else c for c in inst.costs
            ]
            self.sp = np.array([c.deriv_right(0.0) for c in self.costs_reg])
            self.sn = np.array([c.deriv_left(0.0) for c in self.costs_reg])
            self.cp = np.array(
                [0.5 * (c.deriv_right(self.Pi) - c.deriv_right(0.0)) / self.Pi if self.Pi > 0 else 0.0
                 for c in self.costs_reg]
            )
            self.cn = np.array(
                [0.5 * (c.deriv_left(0.0) - c.deriv_left(-self.Po)) / self.Po if self.Po > 0 else 0.0
                 for c in self.costs_reg]
            )

        if self.costs_reg is None:
            d_hi = self.sp + 2.0 * self.cp * self.Pi
            d_lo = self.sn - 2.0 * self.cn * self.Po
            dmax = float(d_hi.max())
            dmin = float(d_lo.min())
        else:
            dmax = max(c.deriv_left(self.Pi) for c in self.costs_reg)
            dmin = min(c.deriv_right(-self.Po) for c in self.costs_reg)
        spread = dmax - dmin
        self.price_scale = max(1.0, abs(dmax), abs(dmin))
        if options.mu_tolerance is not None:
            self.eps = options.mu_tolerance
        else:
            self.eps = max(1e-9 * spread, 1e-12 * self.price_scale)

        lenscale = max(self.E, self.Pi + self.Po)
        band_floor = max(2.0 * spec.feasibility_tol, 1e-12 * lenscale)
        if options.level_band is not None:
            self.band = options.level_band
        elif self.vector_ok:
            lip = 0.5 / min(float(self.cp.min()), float(self.cn.min()))
            raw = self.eps * lip * self.T
            self.band = min(max(raw, band_floor), 1e-4 * lenscale)
        else:
            self.band = max(1e-8 * lenscale, band_floor)

        if self.rho < 1.0:
            # keep rho^{-block} comfortably inside double range
            cap = int(27.6 / max(1e-12, -math.log(self.rho)))
            self.block = max(8, min(512, cap))
            k = np.arange(self.block + 1, dtype=float)
            self.rho_pows = self.rho ** k
            self.inv_rho_pows = self.rho ** (-k)
        else:
            self.block = 512
            self.rho_pows = None
            self.inv_rho_pows = None

        if self.vector_ok:
            self.sp_list = self.sp.tolist()
            self.sn_list = self.sn.tolist()
            self.cp_list = self.cp.tolist()
            self.cn_list = self.cn.tolist()

    def respond(self, mu, pos: int, n: int) -> np.ndarray:
        """Minimising trades for steps pos+1..pos+n; mu is a scalar or an
        n-vector of per-step reference values."""
        if self.vector_ok:
            sp = self.sp[pos : pos + n]
            sn = self.sn[pos : pos + n]
            cp = self.cp[pos : pos + n]
            cn = self.cn[pos : pos + n]
            x = np.where(
                mu > sp,
                (mu - sp) / (2.0 * cp),
                np.where(mu < sn, (mu - sn) / (2.0 * cn), 0.0),
            )
            return np.clip(x, -self.Po, self.Pi)
        mus = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
        out = np.empty(n)
        for j in range(n):
            lo, hi = self.costs_reg[pos + j].response(float(mus[j]), -self.Po, self.Pi)
            out[j] = 0.5 * (lo + hi)
        return out

    def simulate(self, trial: float, t0: int, s0: float) -> _Sim:
        """Forward path under reference value `trial` anchored at time t0
        (mu at step t is trial * rho^{t0 - t}), stopping at the first
        capacity or terminal violation."""
        T, rho, E = self.T, self.rho, self.E
        pos = t0
        s = s0
        mu_pos = trial

        # scalar prefix: most trial paths violate within a few steps of the
        # segment start, where per-block numpy overhead dwarfs the arithmetic
        if self.vector_ok:
            sp_l, sn_l, cp_l, cn_l = self.sp_list, self.sn_list, self.cp_list, self.cn_list
            Pi = self.Pi
            nPo = -self.Po
            lo_T = self.ST - self.band
            hi_T = self.ST + self.band
            prefix: list[float] = []
            push = prefix.append
            limit = min(t0 + _SCALAR_PREFIX, T)
            inv_rho = 1.0 / rho
            while pos < limit:
                if rho != 1.0:
                    mu_pos *= inv_rho
                    if mu_pos > _HUGE_MU:
                        mu_pos = _HUGE_MU
                    elif mu_pos < -_HUGE_MU:
                        mu_pos = -_HUGE_MU
                sp = sp_l[pos]
                sn = sn_l[pos]
                if mu_pos > sp:
                    x = (mu_pos - sp) / (2.0 * cp_l[pos])
                    if x > Pi:
                        x = Pi
                elif mu_pos < sn:
                    x = (mu_pos - sn) / (2.0 * cn_l[pos])
                    if x < nPo:
                        x = nPo
                else:
                    x = 0.0
                s = rho * s + x if rho != 1.0 else s + x
                pos += 1
                push(s)
                if pos == T:
                    if s < lo_T:
                        return _Sim(PathTag.LOWER_VIOLATION, pos, np.array(prefix))
                    if s > hi_T:
                        return _Sim(PathTag.UPPER_VIOLATION, pos, np.array(prefix))
                else:
                    if s < 0.0:
                        return _Sim(PathTag.LOWER_VIOLATION, pos, np.array(prefix))
                    if s > E:
                        return _Sim(PathTag.UPPER_VIOLATION, pos, np.array(prefix))
            chunks: list[np.ndarray] = [np.array(prefix)] if prefix else []
            if pos == T:
                return _Sim(PathTag.FEASIBLE, None, np.concatenate(chunks))
        else:
            chunks = []

        while pos < T:
            n = min(self.block, T - pos)
            if rho == 1.0:
                x = self.respond(mu_pos, pos, n)
                S = s + np.cumsum(x)
            else:
                fac = self.inv_rho_pows[1 : n + 1]
                mu_vec = np.clip(mu_pos * fac, -_HUGE_MU, _HUGE_MU)
                x = self.respond(mu_vec, pos, n)
                S = self.rho_pows[1 : n + 1] * (s + np.cumsum(x * fac))
            lowv = S < 0.0
            highv = S > E
            if pos + n == T:
                lowv[-1] = S[-1] < self.ST - self.band
                highv[-1] = S[-1] > self.ST + self.band
            bad = lowv | highv
            if bad.any():
                k = int(np.argmax(bad))
                chunks.append(S[: k + 1])
                tag = PathTag.LOWER_VIOLATION if lowv[k] else PathTag.UPPER_VIOLATION
                return _Sim(tag, pos + k + 1, np.concatenate(chunks))
            chunks.append(S)
            s = float(S[-1])
            if rho != 1.0:
                mu_pos = float(np.clip(mu_pos * self.inv_rho_pows[n], -_HUGE_MU, _HUGE_MU))
            pos += n
        return _Sim(PathTag.FEASIBLE, None, np.concatenate(chunks))


def _pathdiff(a: np.ndarray, b: np.ndarray) -> float:
    m = min(len(a), len(b))
    return float(np.max(np.abs(a[:m] - b[:m])))


def _snap_terminal(work: _Work, s0: float, path: np.ndarray) -> np.ndarray | None:
    """Adjust the tail of a near-feasible full path so it ends exactly at
    the terminal level, spilling any rate-blocked residue backwards."""
    levels = np.array(path, dtype=float)
    r = work.ST
    for j in range(len(levels) - 1, -1, -1):
        p = levels[j - 1] if j >= 1 else s0
        x = r - work.rho * p
        if -work.Po <= x <= work.Pi:
            levels[j] = r
            return levels
        xc = min(max(x, -work.Po), work.Pi)
        r_prev = (r - xc) / work.rho
        if j == 0 or not 0.0 <= r_prev <= work.E:
            return None
        levels[j] = r
        r = r_prev
    return None


def _final_segment(work: _Work, t0: int, s0: float, trial: float, path: np.ndarray) -> SegmentResult:
    levels = _snap_terminal(work, s0, path)
    if levels is None:
        raise NoConvergence(
            "terminal level cannot be met within rate bounds after snapping"
        )
    return SegmentResult(
        mu_bar=trial / work.rho, segment_end=work.T, horizon=work.T, levels=levels
    )


def _advance(work: _Work, t0: int, s0: float) -> SegmentResult:
    opts = work.options
    # bracket seeded from the first control step of the segment; responses
    # saturate once mu leaves the local derivative range, and geometric
    # growth covers instances whose critical value lies further out
    d_hi = float(work.sp[t0] + 2.0 * work.cp[t0] * work.Pi)
    d_lo = float(work.sn[t0] - 2.0 * work.cn[t0] * work.Po)
    span0 = max(d_hi - d_lo, 1e-6 * work.price_scale)
    pad = 0.01 * span0 + 1e-9 * work.price_scale
    lo = d_lo - pad
    hi = d_hi + pad

    res_lo = work.simulate(lo, t0, s0)
    upper_seen: tuple[float, _Sim] | None = None
    span = span0
    grows = 0
    while res_lo.tag is PathTag.UPPER_VIOLATION:
        upper_seen = (lo, res_lo)
        lo -= span
        span *= opts.bracket_growth
        grows += 1
        if grows > opts.max_bracket_growths:
            raise BracketFailure("no lower-violating reference value found")
        res_lo = work.simulate(lo, t0, s0)
    if res_lo.tag is PathTag.FEASIBLE:
        return _final_segment(work, t0, s0, lo, res_lo.path)

    if upper_seen is not None:
        hi, res_hi = upper_seen
    else:
        res_hi = work.simulate(hi, t0, s0)
        span = span0
        grows = 0
        while res_hi.tag is PathTag.LOWER_VIOLATION:
            lo, res_lo = hi, res_hi
            hi += span
            span *= opts.bracket_growth
            grows += 1
            if grows > opts.max_bracket_growths:
                raise BracketFailure("no upper-violating reference value found")
            res_hi = work.simulate(hi, t0, s0)
        if res_hi.tag is PathTag.FEASIBLE:
            return _final_segment(work, t0, s0, hi, res_hi.path)

    iters = 0
    while True:
        width = hi - lo
        ulp_floor = 8.0 * _FLOAT_EPS * max(1.0, abs(lo), abs(hi))
        if width <= work.eps:
            if _pathdiff(res_lo.path, res_hi.path) <= work.band or width <= ulp_floor:
                break
            if iters >= opts.max_bisection_iters:
                break
        elif iters >= opts.max_bisection_iters:
            raise NoConvergence(
                f"bisection did not reach mu tolerance {work.eps:g} in "
                f"{opts.max_bisection_iters} iterations"
            )
        mid = lo + 0.5 * width
        if not lo < mid < hi:
            break
        res_mid = work.simulate(mid, t0, s0)
        if res_mid.tag is PathTag.FEASIBLE:
            return _final_segment(work, t0, s0, mid, res_mid.path)
        if res_mid.tag is PathTag.LOWER_VIOLATION:
            lo, res_lo = mid, res_mid
        else:
            hi, res_hi = mid, res_mid
        iters += 1

    tb_lo, tb_hi = res_lo.tbar, res_hi.tbar
    if tb_lo > tb_hi:
        # upper path pinches the capacity ceiling at its violation time
        end = tb_hi
        levels = res_hi.path[: end - t0].copy()
        levels[-1] = work.E
        return SegmentResult(
            mu_bar=hi / work.rho, segment_end=end, horizon=tb_lo, levels=levels
        )
    if tb_lo < tb_hi:
        end = tb_lo
        levels = res_lo.path[: end - t0].copy()
        levels[-1] = 0.0
        return SegmentResult(
            mu_bar=lo / work.rho, segment_end=end, horizon=tb_hi, levels=levels
        )
    if tb_lo == work.T:
        # both paths pinch the terminal level: the segment is final
        levels = _snap_terminal(work, s0, res_hi.path)
        trial = hi
        if levels is None:
            levels = _snap_terminal(work, s0, res_lo.path)
            trial = lo
        if levels is None:
            raise NoConvergence(
                "terminal level cannot be met within rate bounds after snapping"
            )
        return SegmentResult(
            mu_bar=trial / work.rho, segment_end=work.T, horizon=work.T, levels=levels
        )
    raise NoConvergence(
        "bracket paths violate opposite capacity bounds at the same time; "
        "the level band cannot separate them"
    )


def _as_validated(instance: Instance | ValidatedInstance) -> ValidatedInstance:
    if isinstance(instance, ValidatedInstance):
        return instance
    return validate_instance(instance)


def classify_path(
    instance: Instance | ValidatedInstance,
    mu: float,
    start_time: int = 0,
    start_level: float | None = None,
    options: SolverOptions | None = None,
) -> PathClass:
    """Simulate the constant-mu path from (start_time, start_level).

    mu is anchored at start_time: the reference value applied at step t is
    mu * rho**(start_time - t), so rho*mu_{t+1} = mu_t along the path.
    """
    vinst = _as_validated(instance)
    work = _Work(vinst, options or SolverOptions())
    s0 = vinst.spec.initial_level if start_level is None else start_level
    if not 0.0 <= s0 <= work.E:
        raise ValueError(f"start_level {s0} outside [0, {work.E}]")
    if not 0 <= start_time < work.T:
        raise ValueError(f"start_time {start_time} outside [0, {work.T})")
    res = work.simulate(mu, start_time, s0)
    return PathClass(tag=res.tag, violation_time=res.tbar)


def advance_segment(
    instance: Instance | ValidatedInstance,
    start_time: int = 0,
    start_level: float | None = None,
    options: SolverOptions | None = None,
) -> SegmentResult:
    """Locate the next constant-mu segment from (start_time, start_level)."""
    vinst = _as_validated(instance)
    work = _Work(vinst, options or SolverOptions())
    s0 = vinst.spec.initial_level if start_level is None else start_level
    return _advance(work, start_time, s0)


def solve(
    instance: Instance | ValidatedInstance, options: SolverOptions | None = None
) -> Solution:
    """Full plan: repeated segment advances with boundary restarts."""
    vinst = _as_validated(instance)
    work = _Work(vinst, options or SolverOptions())
    T = work.T
    levels = np.empty(T + 1)
    levels[0] = work.S0
    mults = np.empty(T)
    seg_ends: list[int] = []
    horizons: list[int] = []
    seg_mu: list[float] = []
    t0 = 0
    s0 = work.S0
    while t0 < T:
        seg = _advance(work, t0, s0)
        if seg.segment_end <= t0:
            raise NoConvergence("segment made no progress")
        levels[t0 + 1 : seg.segment_end + 1] = seg.levels
        m = seg.mu_bar
        for t in range(t0 + 1, seg.segment_end + 1):
            mults[t - 1] = m
            m = m / work.rho
            if abs(m) > _HUGE_MU:
                m = math.copysign(_HUGE_MU, m)
        seg_ends.append(seg.segment_end)
        horizons.append(seg.horizon)
        seg_mu.append(seg.mu_bar)
        t0 = seg.segment_end
        s0 = float(levels[t0])
    schedule = Schedule(levels=levels, rho=work.rho)
    obj = recompute_objective(vinst.instance, schedule)
    return Solution(
        schedule=schedule,
        multipliers=mults,
        segment_ends=tuple(seg_ends),
        horizons=tuple(horizons),
        objective=obj,
        boundary_band=work.band,
        segment_mu=tuple(seg_mu),
    )


def horizon_profile(solution: Solution) -> list[tuple[int, int]]:
    """Per-step look-ahead: steps in segment k see out to that segment's
    horizon; the final segment's horizon is the end of the data."""
    out: list[tuple[int, int]] = []
    start = 0
    for end, tbar in zip(solution.segment_ends, solution.horizons):
        for t in range(start + 1, end + 1):
            out.append((t, tbar - t))
        start = end
    return out
