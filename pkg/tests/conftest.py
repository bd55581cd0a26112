import numpy as np
import pytest

from storarb import (
    Instance,
    StoreSpec,
    piecewise_linear_cost,
    quadratic_impact_cost,
    validate_instance,
)
from storarb.costs import PriceImpactParams
from storarb.model import reachable_bounds


def pwl_instance(prices, capacity, rate, rho=1.0, s0=0.0, sT=0.0, sell_prices=None):
    """Price-taker instance; equal buy/sell prices unless sell_prices given."""
    prices = list(prices)
    sells = prices if sell_prices is None else list(sell_prices)
    costs = tuple(piecewise_linear_cost(b, s) for b, s in zip(prices, sells))
    spec = StoreSpec(
        capacity=capacity, input_rate=rate, output_rate=rate,
        leakage=rho, initial_level=s0, terminal_level=sT,
    )
    return Instance(spec=spec, costs=costs)


def quad_instance(prices, lam, eta=1.0, capacity=10.0, p_in=1.0, p_out=None,
                  rho=1.0, s0=0.0, sT=0.0):
    """Quadratic market-impact instance with impact slope lam * price."""
    p_out = p_in if p_out is None else p_out
    costs = tuple(
        quadratic_impact_cost(
            PriceImpactParams(wholesale_price=float(p), impact_slope=lam * float(p),
                              efficiency=eta)
        )
        for p in prices
    )
    spec = StoreSpec(
        capacity=capacity, input_rate=p_in, output_rate=p_out,
        leakage=rho, initial_level=s0, terminal_level=sT,
    )
    return Instance(spec=spec, costs=costs)


def random_quad_instance(rng, T=None, rho=1.0, eta=1.0, max_T=10):
    """Random smooth instance, feasible by construction: the terminal level
    is drawn strictly inside the forward-reachable interval so grid oracles
    keep rate slack near the terminal step."""
    while True:
        T_draw = int(rng.integers(2, max_T + 1)) if T is None else T
        prices = rng.uniform(5.0, 50.0, size=T_draw)
        lam = float(rng.uniform(0.02, 0.4))
        capacity = float(rng.uniform(1.0, 8.0))
        p_in = float(rng.uniform(0.3, 2.5))
        p_out = float(rng.uniform(0.3, 2.5))
        s0 = float(rng.uniform(0.0, capacity))
        spec = StoreSpec(capacity=capacity, input_rate=p_in, output_rate=p_out,
                         leakage=rho, initial_level=s0, terminal_level=0.0)
        lo, hi = reachable_bounds(spec, T_draw)
        width = hi[T_draw] - lo[T_draw]
        if width >= 0.3:
            break
    T = T_draw
    margin = 0.1 * width
    sT = float(rng.uniform(lo[T] + margin, hi[T] - margin))
    costs = tuple(
        quadratic_impact_cost(
            PriceImpactParams(wholesale_price=float(p), impact_slope=lam * float(p),
                              efficiency=eta)
        )
        for p in prices
    )
    spec = StoreSpec(capacity=capacity, input_rate=p_in, output_rate=p_out,
                     leakage=rho, initial_level=s0, terminal_level=sT)
    return Instance(spec=spec, costs=costs)


@pytest.fixture
def pwl152():
    """The three-step price-taker fixture with prices 1, 5, 2."""
    return pwl_instance([1.0, 5.0, 2.0], capacity=2.0, rate=1.0)


@pytest.fixture
def pwl152_validated(pwl152):
    return validate_instance(pwl152)
