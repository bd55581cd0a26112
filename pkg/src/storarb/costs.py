"""Convex per-step trade cost families and their reference-value responses.

The solver's inner loop asks each cost function two things: the cost of a
trade ``x`` (positive = buy, negative = sell) and the set of trades
minimising ``C(x) - mu*x`` over the rate interval.  Both shipped families,
the price-taker piecewise-linear cost and the quadratic market-impact cost,
are instances of a kinked quadratic

    C(x) = slope_pos*x + curv_pos*x**2   for x >= 0
    C(x) = slope_neg*x + curv_neg*x**2   for x <  0

which keeps responses closed-form and vectorises cleanly.  Round-trip
efficiency is folded into the selling branch (slope_neg = eta*p,
curv_neg = eta**2 * p' for the impact family).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PriceOrder",
    "PriceImpactParams",
    "CostFunction",
    "KinkedQuadraticCost",
    "piecewise_linear_cost",
    "quadratic_impact_cost",
    "regularize",
    "scale_cost",
    "sampled_convexity_ok",
]


class PriceOrder(ValueError):
    """A buy price fell below the matching sell price."""


@dataclass(frozen=True)
class PriceImpactParams:
    """Parameters of the quadratic market-impact cost at one time step.

    wholesale_price is the marginal price of the first unit bought,
    impact_slope is the price increase per unit traded, and efficiency is
    the round-trip fraction of bought volume available to sell.
    """

    wholesale_price: float
    impact_slope: float
    efficiency: float = 1.0

    def __post_init__(self):
        if self.impact_slope < 0:
            raise ValueError(f"impact_slope must be >= 0, got {self.impact_slope}")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency}")


class CostFunction:
    """Convex trade cost over one time step.

    Subclasses provide evaluation, one-sided derivatives on the extended
    line, and the response operator: the closed interval of minimisers of
    ``C(x) - mu*x`` on ``[lower, upper]``.  Instances are immutable and
    safe to share between threads.
    """

    def evaluate(self, x: float) -> float:
        raise NotImplementedError

    def evaluate_array(self, x) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        return np.array([self.evaluate(float(v)) for v in xs.ravel()]).reshape(xs.shape)

    def response(self, mu: float, lower: float, upper: float) -> tuple[float, float]:
        raise NotImplementedError

    def deriv_left(self, x: float) -> float:
        raise NotImplementedError

    def deriv_right(self, x: float) -> float:
        raise NotImplementedError

    @property
    def strictly_convex(self) -> bool:
        return False

    def regularized(self, delta: float) -> "CostFunction":
        return _NumericRegularized(self, delta)

    def scaled(self, gamma: float) -> "CostFunction":
        return _Scaled(self, gamma)


@dataclass(frozen=True)
class KinkedQuadraticCost(CostFunction):
    """Piecewise-quadratic convex cost with a kink at zero trade.

    Covers the price-taker family (both curvatures zero) and the quadratic
    market-impact family.  Convexity requires slope_neg <= slope_pos and
    nonnegative curvatures; instance validation enforces this, the class
    itself only stores the coefficients.
    """

    slope_pos: float
    slope_neg: float
    curv_pos: float = 0.0
    curv_neg: float = 0.0

    def evaluate(self, x: float) -> float:
        if x >= 0.0:
            return (self.slope_pos + self.curv_pos * x) * x
        return (self.slope_neg + self.curv_neg * x) * x

    def evaluate_array(self, x) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        return np.where(
            xs >= 0.0,
            (self.slope_pos + self.curv_pos * xs) * xs,
            (self.slope_neg + self.curv_neg * xs) * xs,
        )

    def response(self, mu: float, lower: float, upper: float) -> tuple[float, float]:
        if not lower <= upper:
            raise ValueError(f"empty response domain [{lower}, {upper}]")
        if mu > self.slope_pos:
            if self.curv_pos > 0.0:
                u_lo = u_hi = (mu - self.slope_pos) / (2.0 * self.curv_pos)
            else:
                u_lo = u_hi = math.inf
        elif mu < self.slope_neg:
            if self.curv_neg > 0.0:
                u_lo = u_hi = (mu - self.slope_neg) / (2.0 * self.curv_neg)
            else:
                u_lo = u_hi = -math.inf
        else:
            u_lo = -math.inf if (mu == self.slope_neg and self.curv_neg == 0.0) else 0.0
            u_hi = math.inf if (mu == self.slope_pos and self.curv_pos == 0.0) else 0.0
        x_lo = min(max(u_lo, lower), upper)
        x_hi = min(max(u_hi, lower), upper)
        return (x_lo, x_hi)

    def deriv_left(self, x: float) -> float:
        if x > 0.0:
            return self.slope_pos + 2.0 * self.curv_pos * x
        return self.slope_neg + 2.0 * self.curv_neg * x

    def deriv_right(self, x: float) -> float:
        if x >= 0.0:
            return self.slope_pos + 2.0 * self.curv_pos * x
        return self.slope_neg + 2.0 * self.curv_neg * x

    @property
    def strictly_convex(self) -> bool:
        return (
            self.curv_pos > 0.0
            and self.curv_neg > 0.0
            and self.slope_neg <= self.slope_pos
        )

    @property
    def convex(self) -> bool:
        return (
            self.curv_pos >= 0.0
            and self.curv_neg >= 0.0
            and self.slope_neg <= self.slope_pos
        )

    def regularized(self, delta: float) -> "KinkedQuadraticCost":
        if delta <= 0.0:
            raise ValueError("delta must be > 0")
        return KinkedQuadraticCost(
            self.slope_pos, self.slope_neg, self.curv_pos + delta, self.curv_neg + delta
        )

    def scaled(self, gamma: float) -> "KinkedQuadraticCost":
        if gamma <= 0.0:
            raise ValueError("gamma must be > 0")
        return KinkedQuadraticCost(
            gamma * self.slope_pos,
            gamma * self.slope_neg,
            gamma * self.curv_pos,
            gamma * self.curv_neg,
        )


def piecewise_linear_cost(buy_price: float, sell_price: float) -> KinkedQuadraticCost:
    """Price-taker cost: buy_price per unit bought, sell_price per unit sold."""
    if buy_price < sell_price:
        raise PriceOrder(
            f"buy price {buy_price} is below sell price {sell_price}"
        )
    return KinkedQuadraticCost(buy_price, sell_price, 0.0, 0.0)


def quadratic_impact_cost(params: PriceImpactParams) -> KinkedQuadraticCost:
    """Quadratic market-impact cost: (p + p'x)x buying, (p + eta p'x) eta x selling."""
    p = params.wholesale_price
    pp = params.impact_slope
    eta = params.efficiency
    return KinkedQuadraticCost(p, eta * p, pp, eta * eta * pp)


def regularize(cost: CostFunction, delta: float) -> CostFunction:
    """Add delta*x**2, making the response single-valued everywhere."""
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    return cost.regularized(delta)


def scale_cost(cost: CostFunction, gamma: float) -> CostFunction:
    """Multiply a cost function by gamma > 0 (response shifts to mu/gamma)."""
    if gamma <= 0.0:
        raise ValueError("gamma must be > 0")
    return cost.scaled(gamma)


class _Scaled(CostFunction):
    def __init__(self, base: CostFunction, gamma: float):
        self._base = base
        self._gamma = gamma

    def evaluate(self, x):
        return self._gamma * self._base.evaluate(x)

    def evaluate_array(self, x):
        return self._gamma * self._base.evaluate_array(x)

    def response(self, mu, lower, upper):
        return self._base.response(mu / self._gamma, lower, upper)

    def deriv_left(self, x):
        return self._gamma * self._base.deriv_left(x)

    def deriv_right(self, x):
        return self._gamma * self._base.deriv_right(x)

    @property
    def strictly_convex(self):
        return self._base.strictly_convex


class _NumericRegularized(CostFunction):
    """C(x) + delta*x**2 for a generic convex base, response by bisection."""

    def __init__(self, base: CostFunction, delta: float):
        if delta <= 0.0:
            raise ValueError("delta must be > 0")
        self._base = base
        self._delta = delta

    def evaluate(self, x):
        return self._base.evaluate(x) + self._delta * x * x

    def response(self, mu, lower, upper):
        if not lower <= upper:
            raise ValueError(f"empty response domain [{lower}, {upper}]")
        # minimiser of f(x) = C(x) + delta x^2 - mu x; f' strictly increasing
        def g_right(x):
            return self._base.deriv_right(x) + 2.0 * self._delta * x - mu

        def g_left(x):
            return self._base.deriv_left(x) + 2.0 * self._delta * x - mu

        if g_right(lower) >= 0.0:
            return (lower, lower)
        if g_left(upper) <= 0.0:
            return (upper, upper)
        a, b = lower, upper
        for _ in range(200):
            m = 0.5 * (a + b)
            if g_left(m) > 0.0:
                b = m
            elif g_right(m) < 0.0:
                a = m
            else:
                return (m, m)
            if b - a <= 1e-15 * max(1.0, abs(a), abs(b)):
                break
        m = 0.5 * (a + b)
        return (m, m)

    def deriv_left(self, x):
        return self._base.deriv_left(x) + 2.0 * self._delta * x

    def deriv_right(self, x):
        return self._base.deriv_right(x) + 2.0 * self._delta * x

    @property
    def strictly_convex(self):
        return True


def sampled_convexity_ok(
    cost: CostFunction, lower: float, upper: float, n: int = 33, tol: float = 1e-9
) -> bool:
    """Midpoint convexity spot-check on an n-point grid over [lower, upper]."""
    if isinstance(cost, KinkedQuadraticCost):
        return cost.convex
    xs = np.linspace(lower, upper, n)
    vals = cost.evaluate_array(xs)
    scale = max(1.0, float(np.max(np.abs(vals))))
    mids = cost.evaluate_array(0.5 * (xs[:-1] + xs[1:]))
    chords = 0.5 * (vals[:-1] + vals[1:])
    return bool(np.all(mids <= chords + tol * scale))
