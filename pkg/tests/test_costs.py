import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from storarb.costs import (
    KinkedQuadraticCost,
    PriceImpactParams,
    PriceOrder,
    piecewise_linear_cost,
    quadratic_impact_cost,
    regularize,
    scale_cost,
    sampled_convexity_ok,
)


def grid_argmin(cost, mu, lo, hi, n=20001):
    """Independent response oracle: dense grid argmin of C(x) - mu*x."""
    xs = np.linspace(lo, hi, n)
    vals = cost.evaluate_array(xs) - mu * xs
    return float(xs[np.argmin(vals)])


class TestPiecewiseLinear:
    def test_between_prices_response_is_zero(self):
        c = piecewise_linear_cost(3.0, 1.0)
        assert c.response(2.0, -1.0, 1.0) == (0.0, 0.0)

    def test_above_buy_price_saturates(self):
        c = piecewise_linear_cost(3.0, 1.0)
        assert c.response(4.0, -1.0, 1.0) == (1.0, 1.0)

    def test_flat_objective_returns_whole_domain(self):
        c = piecewise_linear_cost(3.0, 3.0)
        assert c.response(3.0, -2.0, 1.0) == (-2.0, 1.0)

    def test_at_buy_price_upper_interval(self):
        c = piecewise_linear_cost(3.0, 1.0)
        assert c.response(3.0, -1.0, 1.0) == (0.0, 1.0)

    def test_price_order_enforced(self):
        with pytest.raises(PriceOrder):
            piecewise_linear_cost(1.0, 3.0)

    def test_evaluate_branches(self):
        c = piecewise_linear_cost(3.0, 1.0)
        assert c.evaluate(2.0) == 6.0
        assert c.evaluate(-2.0) == -2.0


class TestQuadraticImpact:
    def test_paper_substitution(self):
        # (p + p'x)x at p=1, p'=0.25, x=2 gives (1 + 0.5)*2 = 3
        c = quadratic_impact_cost(PriceImpactParams(1.0, 0.25, 1.0))
        assert c.evaluate(2.0) == pytest.approx(3.0, abs=1e-15)

    def test_stationary_response(self):
        c = quadratic_impact_cost(PriceImpactParams(1.0, 0.25, 1.0))
        lo, hi = c.response(2.0, -5.0, 5.0)
        assert lo == hi == pytest.approx(2.0, abs=1e-12)
        assert grid_argmin(c, 2.0, -5.0, 5.0) == pytest.approx(2.0, abs=1e-3)

    def test_selling_response(self):
        c = quadratic_impact_cost(PriceImpactParams(3.0, 0.25, 1.0))
        lo, hi = c.response(2.5, -5.0, 1.0)
        assert lo == hi == pytest.approx(-1.0, abs=1e-12)
        assert grid_argmin(c, 2.5, -5.0, 1.0) == pytest.approx(-1.0, abs=1e-3)

    def test_efficiency_in_sell_branch(self):
        c = quadratic_impact_cost(PriceImpactParams(2.0, 0.1, 0.8))
        # (p + eta p' x) eta x at x=-1: (2 - 0.08) * 0.8 * (-1)
        assert c.evaluate(-1.0) == pytest.approx((2.0 - 0.08) * 0.8 * -1.0)

    def test_smooth_when_eta_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            c = quadratic_impact_cost(
                PriceImpactParams(float(rng.uniform(-5, 50)), float(rng.uniform(0, 2)), 1.0)
            )
            for x in rng.uniform(-4, 4, size=8):
                assert c.deriv_left(float(x)) == pytest.approx(
                    c.deriv_right(float(x)), abs=1e-12
                )

    def test_param_validation(self):
        with pytest.raises(ValueError):
            PriceImpactParams(1.0, -0.1, 1.0)
        with pytest.raises(ValueError):
            PriceImpactParams(1.0, 0.1, 0.0)

    def test_eta_preserves_convexity_for_nonnegative_prices(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            p = float(rng.uniform(0.0, 60.0))
            pp = float(rng.uniform(0.0, 3.0))
            eta = float(rng.uniform(0.05, 1.0))
            c = quadratic_impact_cost(PriceImpactParams(p, pp, eta))
            assert c.convex
            # direct midpoint sampling, independent of the analytic flag
            xs = np.linspace(-3.0, 3.0, 33)
            vals = c.evaluate_array(xs)
            mids = c.evaluate_array(0.5 * (xs[:-1] + xs[1:]))
            assert np.all(mids <= 0.5 * (vals[:-1] + vals[1:]) + 1e-9)


class TestRegularize:
    def test_kink_response_is_zero_at_buy_price(self):
        c = regularize(piecewise_linear_cost(3.0, 1.0), 1e-8)
        assert c.response(3.0, -1.0, 1.0) == (0.0, 0.0)

    def test_evaluate_at_zero_unchanged(self):
        base = piecewise_linear_cost(3.0, 1.0)
        assert regularize(base, 1e-8).evaluate(0.0) == base.evaluate(0.0) == 0.0

    def test_unclamped_closed_form(self):
        c = regularize(piecewise_linear_cost(3.0, 1.0), 1e-8)
        mu = 3.0 + 2e-8
        lo, hi = c.response(mu, -1.0, 1.0)
        assert lo == hi == pytest.approx((mu - 3.0) / 2e-8, abs=1e-12)
        assert lo == pytest.approx(1.0, rel=1e-7)

    def test_clamp_binds_past_the_rate_bound(self):
        c = regularize(piecewise_linear_cost(3.0, 1.0), 1e-8)
        lo, hi = c.response(3.0 + 4e-8, -1.0, 1.0)
        assert lo == hi == 1.0

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            regularize(piecewise_linear_cost(3.0, 1.0), 0.0)


class TestScale:
    def test_response_shifts_by_gamma(self):
        base = quadratic_impact_cost(PriceImpactParams(2.0, 0.3, 0.9))
        scaled = scale_cost(base, 3.5)
        for mu in (-1.0, 0.5, 2.0, 7.0):
            assert scaled.response(3.5 * mu, -2.0, 2.0) == base.response(mu, -2.0, 2.0)
        assert scaled.evaluate(1.3) == pytest.approx(3.5 * base.evaluate(1.3))


families = st.sampled_from(["pwl", "quad", "reg"])


def _make_cost(family, rng):
    if family == "pwl":
        s = float(rng.uniform(-5, 40))
        return piecewise_linear_cost(s + float(rng.uniform(0, 10)), s)
    if family == "quad":
        return quadratic_impact_cost(
            PriceImpactParams(float(rng.uniform(0, 50)), float(rng.uniform(1e-3, 2)),
                              float(rng.uniform(0.3, 1.0)))
        )
    sell = float(rng.uniform(0, 40))
    return regularize(
        piecewise_linear_cost(sell + float(rng.uniform(0, 10)), sell),
        float(rng.uniform(1e-9, 1e-4)),
    )


@settings(max_examples=200, deadline=None)
@given(
    family=families,
    seed=st.integers(0, 10_000),
    mu1=st.floats(-60, 60),
    dmu=st.floats(1e-9, 50),
)
def test_response_monotone_in_mu(family, seed, mu1, dmu):
    rng = np.random.default_rng(seed)
    c = _make_cost(family, rng)
    lo, hi = -2.0, 3.0
    r1 = c.response(mu1, lo, hi)
    r2 = c.response(mu1 + dmu, lo, hi)
    assert r1[1] <= r2[0] + 1e-12
    assert r1[0] <= r1[1] and r2[0] <= r2[1]


def test_response_optimality_1000_random_triples():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        family = ("pwl", "quad", "reg")[int(rng.integers(3))]
        c = _make_cost(family, rng)
        mu = float(rng.uniform(-60, 60))
        lo = float(rng.uniform(-4, -0.1))
        hi = float(rng.uniform(0.1, 4))
        r_lo, r_hi = c.response(mu, lo, hi)
        x_star = 0.5 * (r_lo + r_hi)
        best = c.evaluate(x_star) - mu * x_star
        xs = rng.uniform(lo, hi, size=64)
        vals = c.evaluate_array(xs) - mu * xs
        assert np.all(vals >= best - 1e-9)


def test_convexity_sampler_flags_bad_curvature():
    bad = KinkedQuadraticCost(1.0, 2.0, 0.0, 0.0)  # sell slope above buy slope
    assert not sampled_convexity_ok(bad, -1.0, 1.0)
