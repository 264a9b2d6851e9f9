"""
Options Pricing - European Put/Call Valuation
Closed-form Black-Scholes prices, put delta and implied volatility, plus a
Cox-Ross-Rubinstein tree used as a test oracle and pricing fallback.

CONVENTIONS:
- Zero dividend yield
- Year fraction T = calendar days / 365
- European exercise only
"""
import math
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy.optimize import bisect
from scipy.stats import norm

DAYS_PER_YEAR = 365.0

# Implied volatility search settings
IV_LOW = 1e-4
IV_HIGH = 5.0
IV_PRICE_TOL = 1e-8
IV_MAX_ITER = 200


class PricingError(ValueError):
    """Invalid pricing inputs or an unattainable option price."""


@dataclass(frozen=True)
class PricingInputs:
    spot: float
    strike: float
    time_to_expiry: float
    rate: float
    vol: float

    def __post_init__(self):
        if not (self.spot > 0 and self.strike > 0):
            raise PricingError(f"spot and strike must be positive (S={self.spot}, K={self.strike})")
        if self.time_to_expiry < 0:
            raise PricingError(f"time_to_expiry must be >= 0, got {self.time_to_expiry}")
        if self.vol < 0:
            raise PricingError(f"vol must be >= 0, got {self.vol}")

    def with_vol(self, vol):
        return PricingInputs(self.spot, self.strike, self.time_to_expiry, self.rate, vol)

    def with_spot(self, spot):
        return PricingInputs(spot, self.strike, self.time_to_expiry, self.rate, self.vol)


@dataclass(frozen=True)
class PutSpec:
    """Contract identity of a listed put."""
    strike: float
    expiry: date
    multiplier: int = 100

    def __post_init__(self):
        if self.strike <= 0:
            raise PricingError(f"strike must be positive, got {self.strike}")
        if int(self.multiplier) != self.multiplier or self.multiplier < 1:
            raise PricingError(f"multiplier must be an integer >= 1, got {self.multiplier}")


def year_fraction(start, end):
    """Calendar-day year fraction between two dates (never negative)."""
    return max((end - start).days, 0) / DAYS_PER_YEAR


def _d1_d2(inputs):
    sqrt_t = math.sqrt(inputs.time_to_expiry)
    vol_sqrt_t = inputs.vol * sqrt_t
    d1 = (math.log(inputs.spot / inputs.strike)
          + (inputs.rate + 0.5 * inputs.vol ** 2) * inputs.time_to_expiry) / vol_sqrt_t
    return d1, d1 - vol_sqrt_t


def bs_put_price(inputs):
    """Black-Scholes European put, per share of underlying."""
    S, K, T, r = inputs.spot, inputs.strike, inputs.time_to_expiry, inputs.rate
    if T == 0:
        return max(K - S, 0.0)
    discounted_strike = K * math.exp(-r * T)
    if inputs.vol == 0:
        return max(discounted_strike - S, 0.0)
    d1, d2 = _d1_d2(inputs)
    price = discounted_strike * norm.cdf(-d2) - S * norm.cdf(-d1)
    return max(float(price), 0.0)


def bs_call_price(inputs):
    """Black-Scholes European call, per share of underlying."""
    S, K, T, r = inputs.spot, inputs.strike, inputs.time_to_expiry, inputs.rate
    if T == 0:
        return max(S - K, 0.0)
    discounted_strike = K * math.exp(-r * T)
    if inputs.vol == 0:
        return max(S - discounted_strike, 0.0)
    d1, d2 = _d1_d2(inputs)
    price = S * norm.cdf(d1) - discounted_strike * norm.cdf(d2)
    return max(float(price), 0.0)


def bs_put_delta(inputs):
    """Put delta in [-1, 0]; degenerate T or vol fall back to the limit values."""
    S, K, T, r = inputs.spot, inputs.strike, inputs.time_to_expiry, inputs.rate
    if T == 0:
        return -1.0 if S < K else 0.0
    if inputs.vol == 0:
        return -1.0 if S < K * math.exp(-r * T) else 0.0
    d1, _ = _d1_d2(inputs)
    return float(min(max(norm.cdf(d1) - 1.0, -1.0), 0.0))


def price_bounds(inputs, right="put"):
    """No-arbitrage (lower, upper) bounds for a European option price."""
    discounted_strike = inputs.strike * math.exp(-inputs.rate * inputs.time_to_expiry)
    if right == "put":
        return max(discounted_strike - inputs.spot, 0.0), discounted_strike
    if right == "call":
        return max(inputs.spot - discounted_strike, 0.0), inputs.spot
    raise PricingError(f"unknown option right '{right}'")


def implied_vol(price, inputs, right="put"):
    """
    Recover sigma from an observed (mid) price by bisection on [1e-4, 5.0].

    The vol field of `inputs` is ignored. Prices outside the no-arbitrage
    bounds, or not attainable inside the search interval, raise PricingError.
    """
    if inputs.time_to_expiry <= 0:
        raise PricingError("implied vol is undefined at expiry (T = 0)")
    lower, upper = price_bounds(inputs, right)
    if not (lower <= price <= upper):
        raise PricingError(
            f"{right} price {price:.6f} outside no-arbitrage bounds [{lower:.6f}, {upper:.6f}]"
        )

    model = bs_put_price if right == "put" else bs_call_price

    def objective(sigma):
        return model(inputs.with_vol(sigma)) - price

    f_low, f_high = objective(IV_LOW), objective(IV_HIGH)
    if abs(f_low) < IV_PRICE_TOL:
        return IV_LOW
    if abs(f_high) < IV_PRICE_TOL:
        return IV_HIGH
    if f_low > 0 or f_high < 0:
        raise PricingError(
            f"{right} price {price:.6f} not attainable for sigma in [{IV_LOW}, {IV_HIGH}]"
        )
    return float(bisect(objective, IV_LOW, IV_HIGH, xtol=1e-13, maxiter=IV_MAX_ITER))


def crr_binomial_put(inputs, steps):
    """Cox-Ross-Rubinstein European put with `steps` time steps."""
    if steps < 1:
        raise PricingError(f"steps must be >= 1, got {steps}")
    S, K, T, r = inputs.spot, inputs.strike, inputs.time_to_expiry, inputs.rate
    if T == 0:
        return max(K - S, 0.0)
    if inputs.vol == 0:
        return bs_put_price(inputs)

    dt = T / steps
    up = math.exp(inputs.vol * math.sqrt(dt))
    down = 1.0 / up
    growth = math.exp(r * dt)
    p_up = (growth - down) / (up - down)
    discount = 1.0 / growth

    # terminal nodes ordered from all-down to all-up
    j = np.arange(steps + 1, dtype=np.float64)
    terminal = S * up ** j * down ** (steps - j)
    values = np.maximum(K - terminal, 0.0)
    for _ in range(steps):
        values = discount * (p_up * values[1:] + (1.0 - p_up) * values[:-1])
    return float(values[0])


def put_delta_from_quote(quote_delta, mid, spot, strike, time_to_expiry, rate):
    """
    Delta used for hedge sizing: the vendor delta when quoted, otherwise the
    model delta at the implied vol of the quote mid.
    """
    if quote_delta is not None and not (isinstance(quote_delta, float) and math.isnan(quote_delta)):
        return float(quote_delta)
    inputs = PricingInputs(spot, strike, time_to_expiry, rate, 0.0)
    sigma = implied_vol(mid, inputs, "put")
    return bs_put_delta(inputs.with_vol(sigma))
