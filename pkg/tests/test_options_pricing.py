"""Tests for Black-Scholes pricing, implied volatility and the CRR oracle."""
import math
from datetime import date

import pytest
from hypothesis import given, settings, strategies as st

from scripts.backtest.options_pricing import (
    PricingError,
    PricingInputs,
    PutSpec,
    bs_call_price,
    bs_put_delta,
    bs_put_price,
    crr_binomial_put,
    implied_vol,
    price_bounds,
    put_delta_from_quote,
    year_fraction,
)

# (S/K, T, sigma) grid for the tree comparison
GRID = [(m, t, s) for m in (0.8, 0.95, 1.0, 1.1, 1.25) for t, s in ((0.1, 0.15), (0.5, 0.3), (1.0, 0.2), (2.0, 0.5))]


def test_year_fraction_uses_calendar_days():
    assert year_fraction(date(2024, 1, 1), date(2024, 1, 31)) == pytest.approx(30 / 365)
    assert year_fraction(date(2024, 2, 1), date(2024, 1, 1)) == 0.0


@pytest.mark.parametrize("moneyness,tau,sigma", GRID)
def test_black_scholes_matches_binomial_tree(moneyness, tau, sigma):
    """2000-step CRR converges to the closed form within 1e-3."""
    inputs = PricingInputs(100.0 * moneyness, 100.0, tau, 0.02, sigma)
    assert abs(bs_put_price(inputs) - crr_binomial_put(inputs, 2000)) < 1e-3


def test_single_period_tree_by_hand():
    """u = 1.1, d = 1/1.1, r = 0: p = 10/21, put = (11/21) * (100 - 100/1.1) = 100/21."""
    inputs = PricingInputs(100.0, 100.0, 1.0, 0.0, math.log(1.1))
    assert crr_binomial_put(inputs, 1) == pytest.approx(100.0 / 21.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    spot=st.floats(20.0, 300.0),
    strike=st.floats(20.0, 300.0),
    tau=st.floats(0.01, 3.0),
    rate=st.floats(0.0, 0.08),
    vol=st.floats(0.05, 1.0),
)
def test_put_call_parity(spot, strike, tau, rate, vol):
    inputs = PricingInputs(spot, strike, tau, rate, vol)
    lhs = bs_call_price(inputs) - bs_put_price(inputs)
    rhs = spot - strike * math.exp(-rate * tau)
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(spot, strike))


@pytest.mark.parametrize("moneyness,tau,sigma", GRID)
def test_put_delta_matches_finite_difference(moneyness, tau, sigma):
    inputs = PricingInputs(100.0 * moneyness, 100.0, tau, 0.02, sigma)
    h = 1e-4
    fd = (bs_put_price(inputs.with_spot(inputs.spot + h)) - bs_put_price(inputs.with_spot(inputs.spot - h))) / (2 * h)
    delta = bs_put_delta(inputs)
    assert -1.0 <= delta <= 0.0
    assert delta == pytest.approx(fd, abs=1e-5)


def test_expiry_and_zero_vol_limits():
    assert bs_put_price(PricingInputs(90.0, 100.0, 0.0, 0.02, 0.2)) == 10.0
    assert bs_put_price(PricingInputs(110.0, 100.0, 0.0, 0.02, 0.2)) == 0.0
    assert bs_put_delta(PricingInputs(90.0, 100.0, 0.0, 0.02, 0.2)) == -1.0
    zero_vol = PricingInputs(90.0, 100.0, 0.5, 0.02, 0.0)
    assert bs_put_price(zero_vol) == pytest.approx(100.0 * math.exp(-0.01) - 90.0)


@pytest.mark.parametrize("sigma", [0.05, 0.2, 0.6, 1.5])
def test_implied_vol_recovers_sigma(sigma):
    inputs = PricingInputs(100.0, 105.0, 0.25, 0.01, sigma)
    recovered = implied_vol(bs_put_price(inputs), inputs)
    assert recovered == pytest.approx(sigma, abs=1e-6)


def test_implied_vol_rejects_price_outside_bounds():
    inputs = PricingInputs(100.0, 100.0, 0.5, 0.02, 0.0)
    lower, upper = price_bounds(inputs)
    with pytest.raises(PricingError):
        implied_vol(upper + 1.0, inputs)
    with pytest.raises(PricingError):
        implied_vol(-0.01, inputs)
    with pytest.raises(PricingError):
        implied_vol(1.0, PricingInputs(100.0, 100.0, 0.0, 0.02, 0.0))


def test_put_delta_from_quote_prefers_vendor_delta():
    assert put_delta_from_quote(-0.42, 2.5, 100.0, 100.0, 0.1, 0.0) == -0.42
    inputs = PricingInputs(100.0, 100.0, 0.1, 0.0, 0.25)
    mid = bs_put_price(inputs)
    derived = put_delta_from_quote(None, mid, 100.0, 100.0, 0.1, 0.0)
    assert derived == pytest.approx(bs_put_delta(inputs), abs=1e-6)
    assert put_delta_from_quote(float('nan'), mid, 100.0, 100.0, 0.1, 0.0) == pytest.approx(derived)


def test_invalid_inputs_raise():
    with pytest.raises(PricingError):
        PricingInputs(-1.0, 100.0, 0.5, 0.0, 0.2)
    with pytest.raises(PricingError):
        PricingInputs(100.0, 100.0, -0.1, 0.0, 0.2)
    with pytest.raises(PricingError):
        PutSpec(100.0, date(2024, 1, 19), multiplier=0)
    with pytest.raises(PricingError):
        crr_binomial_put(PricingInputs(100.0, 100.0, 0.5, 0.0, 0.2), 0)

