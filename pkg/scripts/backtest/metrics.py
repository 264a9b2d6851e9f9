"""
Metrics - Performance Table, Regime Slices and Bootstrap Significance

Table columns follow the usual results layout: SR, SoR, CR, TR(%), MDD(%), Vol(%).

CONVENTIONS:
- 252 periods per year; r_f configured annually, applied as r_f / 252 per day
- Vol, SR and SoR use the sample std (ddof=1) and sqrt(252) scaling
- Sortino downside deviation = RMS of min(r - r_f_daily, 0)
- SoR with zero downside and CR with zero drawdown are +inf (serialised "inf")
  when the curve gains; a flat curve (0/0) reports 0.0 for both
- Bootstrap: arch StationaryBootstrap on the paired series, expected block
  length ceil(n^(1/3)), two-sided p-value of the centred statistic
"""
import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import Optional

import numpy as np
import pandas as pd
from arch.bootstrap import StationaryBootstrap

logger = logging.getLogger(__name__)

PERIODS_PER_YEAR = 252
DEGENERATE_STD = 1e-12
DEFAULT_RESAMPLES = 10_000
MIN_RESAMPLES = 1000

METRIC_COLUMNS = ('SR', 'SoR', 'CR', 'TR', 'MDD', 'Vol')
PERCENT_COLUMNS = ('TR', 'MDD', 'Vol')
LOWER_IS_BETTER = ('MDD', 'Vol')
BOOTSTRAP_STATISTICS = ('mean_excess', 'sharpe_diff')


class MetricsError(ValueError):
    """Curve or return series unusable for the requested metric."""


@dataclass(frozen=True)
class MetricTable:
    SR: float
    SoR: float
    CR: float
    TR: float
    MDD: float
    Vol: float
    annual_return: float
    n_days: int
    start: Optional[date] = None
    end: Optional[date] = None

    def as_dict(self):
        return {
            'SR': self.SR, 'SoR': self.SoR, 'CR': self.CR, 'TR': self.TR, 'MDD': self.MDD, 'Vol': self.Vol,
            'annual_return': self.annual_return, 'n_days': self.n_days,
            'start': self.start.isoformat() if self.start else None,
            'end': self.end.isoformat() if self.end else None,
        }

    def display_row(self):
        """Metric columns with fractions converted to percent."""
        return {c: getattr(self, c) * (100.0 if c in PERCENT_COLUMNS else 1.0) for c in METRIC_COLUMNS}


@dataclass(frozen=True)
class RegimeWindow:
    label: str
    start: date
    end: date

    def __post_init__(self):
        if not self.start < self.end:
            raise MetricsError(f"regime window '{self.label}' needs start < end ({self.start} .. {self.end})")


REGIME_PRESETS = (
    RegimeWindow('Rising', date(2020, 4, 1), date(2021, 8, 31)),
    RegimeWindow('Falling', date(2022, 1, 1), date(2022, 6, 30)),
    RegimeWindow('Volatile', date(2022, 5, 1), date(2023, 1, 31)),
)


def daily_returns(curve):
    curve = np.asarray(curve, dtype=np.float64)
    return curve[1:] / curve[:-1] - 1.0


def max_drawdown(curve):
    """Largest (peak - V) / peak over the running peak."""
    curve = np.asarray(curve, dtype=np.float64)
    peaks = np.maximum.accumulate(curve)
    return float(np.max((peaks - curve) / peaks))


def compute_metrics(curve, rf_annual=0.0, periods=PERIODS_PER_YEAR, dates=None):
    """
    Six-metric table for an equity curve of at least two positive values.

    Args:
        curve: daily portfolio values V_0..V_n, all finite and > 0
        rf_annual: annual risk-free rate, applied as rf_annual / periods per day
        periods: annualisation factor
        dates: optional curve dates, echoed as start / end

    Returns:
        MetricTable. SoR and CR are +inf when the curve never loses but
        gains overall, and 0.0 when it is flat.

    Raises:
        MetricsError: fewer than 2 points, or a non-positive or non-finite value
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 1 or len(curve) < 2:
        raise MetricsError(f"equity curve needs >= 2 points, got {len(curve)}")
    if not np.all(np.isfinite(curve)) or np.any(curve <= 0):
        raise MetricsError("equity curve values must be finite and positive")

    r = daily_returns(curve)
    n = len(r)
    rf_daily = rf_annual / periods
    excess = r - rf_daily
    std = float(np.std(r, ddof=1)) if n > 1 else 0.0
    scale = math.sqrt(periods)

    total_return = float(curve[-1] / curve[0] - 1.0)
    with np.errstate(over="ignore"):
        annual_return = float(np.expm1(periods / n * np.log1p(total_return)))
    vol = std * scale
    sharpe = float(np.mean(excess)) / std * scale if std >= DEGENERATE_STD else 0.0

    downside = float(np.sqrt(np.mean(np.minimum(excess, 0.0) ** 2)))
    mean_excess = float(np.mean(excess))
    if downside > 0:
        sortino = mean_excess / downside * scale
    else:
        sortino = math.inf if mean_excess > 0 else 0.0

    mdd = max_drawdown(curve)
    if mdd > 0:
        calmar = annual_return / mdd
    else:
        calmar = math.inf if annual_return > 0 else 0.0

    start = dates[0] if dates is not None else None
    end = dates[-1] if dates is not None else None
    return MetricTable(sharpe, sortino, calmar, total_return, mdd, vol, annual_return, n, start, end)


def windows_in_range(windows, dates):
    """Windows holding at least two curve dates."""
    dates = list(dates)
    return [w for w in windows if sum(1 for d in dates if w.start <= d <= w.end) >= 2]


def regime_slice(curve, dates, windows, rf_annual=0.0, periods=PERIODS_PER_YEAR):
    """Independent MetricTable per window over the curve points dated inside it."""
    series = pd.Series(np.asarray(curve, dtype=np.float64), index=pd.to_datetime(list(dates)))
    if len(series) != len(curve):
        raise MetricsError("curve and dates differ in length")
    tables = {}
    for window in windows:
        sub = series[(series.index >= pd.Timestamp(window.start)) & (series.index <= pd.Timestamp(window.end))]
        if len(sub) < 2:
            raise MetricsError(f"regime window '{window.label}' ({window.start} .. {window.end}) "
                               f"holds {len(sub)} curve point(s)")
        tables[window.label] = compute_metrics(sub.to_numpy(), rf_annual, periods,
                                               [ts.date() for ts in sub.index])
    return tables


def _sharpe(r):
    std = np.std(r, ddof=1)
    return 0.0 if std < DEGENERATE_STD else float(np.mean(r) / std)


def _statistic(name):
    if name == 'mean_excess':
        return lambda a, b: float(np.mean(a - b))
    if name == 'sharpe_diff':
        return lambda a, b: _sharpe(a) - _sharpe(b)
    raise MetricsError(f"unknown bootstrap statistic '{name}' (expected one of {BOOTSTRAP_STATISTICS})")


def default_block_length(n):
    return max(1, math.ceil(n ** (1.0 / 3.0)))


def bootstrap_test(returns_a, returns_b, statistic='mean_excess', n_resamples=DEFAULT_RESAMPLES,
                   block_length=None, seed=0):
    """
    Two-sided stationary-bootstrap p-value for H0: statistic(A, B) = 0.

    Both series are resampled with the same block indices so their pairing
    survives; the resampled statistic is centred on the observed one.

    Args:
        returns_a, returns_b: aligned daily returns of the reference and the rival
        statistic: 'mean_excess' (mean of a - b) or 'sharpe_diff'
        n_resamples: bootstrap draws B, at least 1000
        block_length: expected block length; ceil(n ** (1/3)) when None
        seed: resampling seed

    Returns:
        p-value in [0, 1]
    """
    a = np.asarray(returns_a, dtype=np.float64)
    b = np.asarray(returns_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricsError(f"return series must be aligned 1-D arrays, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise MetricsError("bootstrap needs at least 2 aligned returns")
    if n_resamples < MIN_RESAMPLES:
        raise MetricsError(f"bootstrap needs >= {MIN_RESAMPLES} resamples, got {n_resamples}")
    stat = _statistic(statistic)
    block_length = block_length or default_block_length(len(a))

    observed = stat(a, b)
    bs = StationaryBootstrap(block_length, a, b, seed=seed)
    draws = bs.apply(lambda x, y: np.array([stat(x, y)]), n_resamples)[:, 0]
    p_value = float(np.mean(np.abs(draws - observed) >= abs(observed)))
    logger.info(f"bootstrap {statistic}: observed={observed:.6g}, block={block_length}, "
                f"B={n_resamples}, p={p_value:.4f}")
    return p_value


def improvement_row(reference, others):
    """
    Percent improvement of the reference row over the best other row, per
    metric (reduction for MDD and Vol). None where undefined.
    """
    row = {}
    for column in METRIC_COLUMNS:
        values = [o[column] for o in others if o.get(column) is not None and math.isfinite(o[column])]
        ref = reference.get(column)
        if not values or ref is None or not math.isfinite(ref):
            row[column] = None
            continue
        if column in LOWER_IS_BETTER:
            best = min(values)
            row[column] = (best - ref) / best * 100.0 if best != 0 else None
        else:
            best = max(values)
            row[column] = (ref - best) / abs(best) * 100.0 if best != 0 else None
    return row
