"""
Signals - Forecast, Sentiment Aggregation and Market Regime Indicator

Produces the per-day inputs the agents read besides prices and quotes:
- f_t: fractional price change expected over the next 30 trading days
- sent_t: daily sentiment score in [0, 100]
- a continuous regime score (negative = bearish, positive = bullish)
- 20-day realised volatility of closes (annualised)

LOOK-AHEAD:
Every value dated t is a function of bars dated <= t only. The forecaster
receives exactly the 60-bar window ending at t.
"""
import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import TYPE_CHECKING, Optional, Protocol, Sequence

import numpy as np

if TYPE_CHECKING:
    from scripts.backtest.market_data import Bar

logger = logging.getLogger(__name__)

FORECAST_WINDOW = 60
FORECAST_HORIZON = 30
FORECAST_CLAMP = 0.5
NEUTRAL_SENTIMENT = 50.0
REFERENCE_VIX = 20.0
REALIZED_VOL_WINDOW = 20
TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class Forecast:
    date: date
    f: float

    def __post_init__(self):
        if not math.isfinite(self.f):
            raise ValueError(f"forecast for {self.date} is not finite: {self.f}")


@dataclass(frozen=True)
class RegimeIndicator:
    date: Optional[date]
    score: float

    @property
    def bearish(self):
        return self.score < 0


@dataclass(frozen=True)
class SignalConfig:
    w_f: float = 0.5
    w_s: float = 0.5
    tanh_scale: float = 0.05
    use_vix: bool = False
    w_v: float = 0.25


@dataclass(frozen=True)
class DailySignals:
    date: date
    f: float
    forecast_available: bool
    sent: float
    vix: float
    regime: float
    realized_vol: float


class Forecaster(Protocol):
    """Anything that maps a fixed-length bar window to a scalar forecast."""

    window: int

    def forecast(self, history: Sequence["Bar"]) -> Optional[Forecast]:
        ...


class MomentumForecaster:
    """Drift extrapolation: 30 x mean daily log return, clamped to +/-0.5."""

    def __init__(self, window=FORECAST_WINDOW, horizon=FORECAST_HORIZON, clamp=FORECAST_CLAMP):
        self.window = window
        self.horizon = horizon
        self.clamp = clamp

    def forecast(self, history):
        if len(history) < self.window:
            return None
        closes = np.array([bar.close for bar in history[-self.window:]], dtype=np.float64)
        drift = float(np.mean(np.diff(np.log(closes))))
        f = float(np.clip(self.horizon * drift, -self.clamp, self.clamp))
        return Forecast(history[-1].date, f)


def forecaster_interface(history, forecaster=None):
    """
    Run `forecaster` on the window ending at the last bar of `history`.
    Returns None when fewer than `forecaster.window` bars exist; callers
    substitute f = 0.
    """
    forecaster = forecaster or MomentumForecaster()
    if len(history) < forecaster.window:
        return None
    return forecaster.forecast(list(history[-forecaster.window:]))


def momentum_forecaster(history):
    return forecaster_interface(history, MomentumForecaster())


def aggregate_sentiment(scores):
    """Mean of the day's scores; 50 (neutral) when there are none."""
    scores = [float(s) for s in scores]
    if not scores:
        return NEUTRAL_SENTIMENT
    return float(min(max(np.mean(scores), 0.0), 100.0))


def regime_score(forecast, sent, vix, config=SignalConfig(), on=None):
    """
    score = w_f*tanh(f/scale) + w_s*(sent-50)/50 [- w_v*(vix-20)/20]
    Bearish iff score < 0.
    """
    if isinstance(forecast, Forecast):
        on = on or forecast.date
        f = forecast.f
    else:
        f = float(forecast)
    score = (config.w_f * math.tanh(f / config.tanh_scale)
             + config.w_s * (sent - NEUTRAL_SENTIMENT) / NEUTRAL_SENTIMENT)
    if config.use_vix:
        score -= config.w_v * (vix - REFERENCE_VIX) / REFERENCE_VIX
    return RegimeIndicator(on, float(score))


def realized_volatility(closes, window=REALIZED_VOL_WINDOW):
    """Annualised std of the last `window` daily log returns (0 if too short)."""
    closes = np.asarray(closes[-(window + 1):], dtype=np.float64)
    if len(closes) < 3:
        return 0.0
    returns = np.diff(np.log(closes))
    return float(np.std(returns, ddof=1) * math.sqrt(TRADING_DAYS_PER_YEAR))


def compute_signals(slices, forecaster=None, config=SignalConfig()):
    """
    Daily signal table for an aligned slice series.

    Slice t only ever sees bars[0..t]; f falls back to 0 when fewer than
    `forecaster.window` bars are available.
    """
    forecaster = forecaster or MomentumForecaster()
    bars = [s.bar for s in slices]
    closes = np.array([bar.close for bar in bars], dtype=np.float64)
    out = []
    substituted = 0
    for t, market in enumerate(slices):
        history = bars[:t + 1]
        forecast = forecaster_interface(history, forecaster)
        if forecast is None:
            f, available = 0.0, False
            substituted += 1
        else:
            f, available = forecast.f, True
        regime = regime_score(f, market.sentiment, market.vix, config, on=market.date)
        out.append(DailySignals(
            date=market.date,
            f=f,
            forecast_available=available,
            sent=market.sentiment,
            vix=market.vix,
            regime=regime.score,
            realized_vol=realized_volatility(closes[:t + 1]),
        ))
    if substituted:
        logger.info(f"Forecast unavailable on {substituted} day(s); neutral f=0 substituted")
    return out
