"""
Baselines - Comparison Strategies and Ablations

Every strategy runs through the same coordinator, ledger and metrics; only
the daily trading decision (a) and hedging decision (alpha) differ.

STRATEGIES:
- buy_and_hold:           a = 1 on the first day, 0 afterwards, never hedges
- kdj_rsi:                KDJ(9,3,3) crossings filtered by RSI(14) 70/30
- standalone_rl:          RL trader alone, no put features, no messages
- classic_delta:          RL trader + full delta hedge while the regime is bearish
- no_hedge:               RL trader with put features, zero context, no hedger
- single_hedger:<kind>:   deltahedge with one fixed hedging learner
- deltahedge:             RL trader + quarterly ensemble-selected hedger
"""
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from scripts.backtest.rl_core import LEARNER_KINDS

logger = logging.getLogger(__name__)

KDJ_WINDOW = 9
KDJ_K_SMOOTH = 3
KDJ_D_SMOOTH = 3
RSI_WINDOW = 14
RSI_OVERBOUGHT = 70.0
RSI_OVERSOLD = 30.0
KDJ_SEED = 50.0


class StrategyKind(str, Enum):
    BUY_AND_HOLD = 'buy_and_hold'
    KDJ_RSI = 'kdj_rsi'
    STANDALONE_RL = 'standalone_rl'
    CLASSIC_DELTA = 'classic_delta'
    NO_HEDGE = 'no_hedge'
    SINGLE_HEDGER = 'single_hedger'
    DELTAHEDGE = 'deltahedge'


@dataclass(frozen=True)
class StrategySpec:
    """How a strategy fills the coordinator's trading and hedging steps."""
    kind: StrategyKind
    trading: str
    hedging: str
    include_options: bool = True
    include_context: bool = True
    learner: Optional[str] = None

    @property
    def name(self):
        if self.kind is StrategyKind.SINGLE_HEDGER:
            return f"single_hedger:{self.learner}"
        return self.kind.value

    @property
    def uses_rl_trader(self):
        return self.trading == 'rl'

    @property
    def retrains_hedger(self):
        return self.hedging in ('ensemble', 'single')


_SINGLE_PATTERN = re.compile(r"^single_hedger[:(]\s*(\w+)\s*\)?$")


def parse_strategy(name):
    """'deltahedge', 'kdj_rsi', 'single_hedger:ClippedPG' (or 'single_hedger(ClippedPG)') -> StrategySpec."""
    name = name.strip()
    match = _SINGLE_PATTERN.match(name)
    if match:
        learner = match.group(1)
        if learner not in LEARNER_KINDS:
            raise ValueError(f"single_hedger learner must be one of {LEARNER_KINDS}, got '{learner}'")
        return StrategySpec(StrategyKind.SINGLE_HEDGER, 'rl', 'single', learner=learner)
    try:
        kind = StrategyKind(name)
    except ValueError:
        known = [k.value for k in StrategyKind if k is not StrategyKind.SINGLE_HEDGER] + ['single_hedger:<kind>']
        raise ValueError(f"unknown strategy '{name}' (known: {', '.join(known)})")
    if kind is StrategyKind.SINGLE_HEDGER:
        raise ValueError("single_hedger needs a learner kind, e.g. single_hedger:ClippedPG")
    return {
        StrategyKind.BUY_AND_HOLD: StrategySpec(kind, 'buy_and_hold', 'none', False, False),
        StrategyKind.KDJ_RSI: StrategySpec(kind, 'kdj_rsi', 'none', False, False),
        StrategyKind.STANDALONE_RL: StrategySpec(kind, 'rl', 'none', False, False),
        StrategyKind.CLASSIC_DELTA: StrategySpec(kind, 'rl', 'rule'),
        StrategyKind.NO_HEDGE: StrategySpec(kind, 'rl', 'none'),
        StrategyKind.DELTAHEDGE: StrategySpec(kind, 'rl', 'ensemble'),
    }[kind]


# ========================================
# Buy and hold
# ========================================

def buy_and_hold_rule(state, market, day_index):
    """Full investment on the first test day, hold afterwards; never hedges."""
    return (1.0 if day_index == 0 else 0.0), 0.0


# ========================================
# KDJ + RSI
# ========================================

@dataclass(frozen=True)
class KdjRsiConfig:
    window: int = KDJ_WINDOW
    k_smooth: int = KDJ_K_SMOOTH
    d_smooth: int = KDJ_D_SMOOTH
    rsi_window: int = RSI_WINDOW
    overbought: float = RSI_OVERBOUGHT
    oversold: float = RSI_OVERSOLD

    @property
    def warmup(self):
        return max(self.window, self.rsi_window + 1)


def _seeded_ewm(series, smooth):
    """x_t = (1 - 1/s) x_{t-1} + (1/s) v_t, x_{-1} = 50."""
    seeded = pd.concat([pd.Series([KDJ_SEED]), series.reset_index(drop=True)], ignore_index=True)
    smoothed = seeded.ewm(alpha=1.0 / smooth, adjust=False).mean().iloc[1:]
    smoothed.index = series.index
    return smoothed


def compute_kdj(high, low, close, window=KDJ_WINDOW, k_smooth=KDJ_K_SMOOTH, d_smooth=KDJ_D_SMOOTH):
    """K, D, J columns; RSV = 50 while the window's high-low range is zero."""
    lowest = low.rolling(window, min_periods=1).min()
    highest = high.rolling(window, min_periods=1).max()
    span = highest - lowest
    rsv = ((close - lowest) / span.where(span > 0) * 100.0).fillna(50.0)
    k = _seeded_ewm(rsv, k_smooth)
    d = _seeded_ewm(k, d_smooth)
    return pd.DataFrame({'K': k, 'D': d, 'J': 3.0 * k - 2.0 * d})


def compute_rsi(close, window=RSI_WINDOW):
    """Wilder RSI; 100 with gains and no losses, 50 on a flat series."""
    delta = close.diff()
    gain = delta.where(delta > 0, 0.0).ewm(alpha=1.0 / window, adjust=False).mean()
    loss = (-delta.where(delta < 0, 0.0)).ewm(alpha=1.0 / window, adjust=False).mean()
    rsi = 100.0 - 100.0 / (1.0 + gain / loss.where(loss > 0))
    rsi = rsi.where(loss > 0, np.where(gain > 0, 100.0, 50.0))
    return rsi.rename(f"RSI({window})")


def indicator_frame(bars, config=KdjRsiConfig()):
    frame = pd.DataFrame(
        {'high': [b.high for b in bars], 'low': [b.low for b in bars], 'close': [b.close for b in bars]},
        index=pd.Index([b.date for b in bars], name='date'),
    )
    kdj = compute_kdj(frame['high'], frame['low'], frame['close'], config.window, config.k_smooth,
                      config.d_smooth)
    kdj['RSI'] = compute_rsi(frame['close'], config.rsi_window)
    return kdj


def kdj_rsi_decision(k_prev, d_prev, k, d, rsi, config=KdjRsiConfig()):
    """Buy on a K/D upcross with RSI < 70, sell on a downcross with RSI > 30."""
    if k_prev <= d_prev and k > d and rsi < config.overbought:
        return 1.0
    if k_prev >= d_prev and k < d and rsi > config.oversold:
        return -1.0
    return 0.0


def _decide_at(frame, t, config):
    if t < config.warmup:
        return 0.0
    prev, row = frame.iloc[t - 1], frame.iloc[t]
    return kdj_rsi_decision(prev['K'], prev['D'], row['K'], row['D'], row['RSI'], config)


def kdj_rsi_rule(history, state=None, config=KdjRsiConfig()):
    """(a, alpha=0) for the last bar of `history`; a = 0 during warm-up."""
    if len(history) <= config.warmup:
        return 0.0, 0.0
    return _decide_at(indicator_frame(history, config), len(history) - 1, config), 0.0


class KdjRsiTrader:
    """
    kdj_rsi_rule over a whole bar series computed once. Rolling and
    recursive indicators are causal, so row t equals a recomputation on
    bars[0..t].
    """

    def __init__(self, bars, config=KdjRsiConfig()):
        self.config = config
        self.frame = indicator_frame(bars, config)
        self.position = {d: i for i, d in enumerate(self.frame.index)}

    def __call__(self, market):
        return _decide_at(self.frame, self.position[market.date], self.config)


# ========================================
# Classic delta hedge
# ========================================

def classic_delta_rule(state, market, regime):
    """Full hedge (alpha = 1) while the regime score is strictly negative."""
    score = regime.score if hasattr(regime, 'score') else float(regime)
    return 1.0 if score < 0 else 0.0
