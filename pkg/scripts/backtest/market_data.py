"""
Market Data - Feed Loading, Calendar Alignment and Synthetic Datasets

FEEDS (CSV, UTF-8, header row required, ISO-8601 dates):
- bars.csv:      date,open,high,low,close,volume
- options.csv:   date,expiry,strike,right,bid,ask,delta,volume,open_interest
- sentiment.csv: date,score
- vix.csv:       date,level

Each loader validates every row and reports the 1-based file line of the
first violation. align_calendar() turns the four feeds into one MarketSlice
per trading day; synth_generate() builds a seeded desk-scale dataset.
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from scripts.backtest.options_pricing import PricingInputs, bs_put_delta, bs_put_price, year_fraction
from scripts.backtest.signals import NEUTRAL_SENTIMENT, aggregate_sentiment

logger = logging.getLogger(__name__)

BAR_COLUMNS = ["date", "open", "high", "low", "close", "volume"]
OPTION_COLUMNS = ["date", "expiry", "strike", "right", "bid", "ask", "delta", "volume", "open_interest"]
SENTIMENT_COLUMNS = ["date", "score"]
VIX_COLUMNS = ["date", "level"]

FEED_FILES = {
    'bars': 'bars.csv',
    'options': 'options.csv',
    'sentiment': 'sentiment.csv',
    'vix': 'vix.csv',
}

NEUTRAL_VIX = 20.0

# Synthetic option ladder
SYNTH_STRIKES = 11
SYNTH_STRIKE_STEP = 0.01
SYNTH_DTE_DAYS = 30
SYNTH_MIN_SPREAD = 0.02
SYNTH_SPREAD_RATE = 0.01
SYNTH_OPTION_VOLUME = 500
SYNTH_OPEN_INTEREST = 5000
SYNTH_START = date(2016, 1, 4)


class DataValidationError(ValueError):
    """A feed row (or whole feed) violates its schema or invariants."""

    def __init__(self, path, line, message):
        self.path = str(path) if path is not None else None
        self.line = line
        where = self.path or "<feed>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Bar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int


@dataclass(frozen=True)
class OptionQuote:
    date: date
    expiry: date
    strike: float
    right: str
    bid: float
    ask: float
    delta: Optional[float]
    volume: int
    open_interest: int

    @property
    def mid(self):
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class SentimentRecord:
    date: date
    score: float


@dataclass(frozen=True)
class VixRecord:
    date: date
    level: float


@dataclass(frozen=True)
class MarketSlice:
    date: date
    bar: Bar
    puts: tuple = ()
    sentiment: float = NEUTRAL_SENTIMENT
    vix: float = NEUTRAL_VIX

    @property
    def close(self):
        return self.bar.close


@dataclass
class MarketDataset:
    bars: list
    options: list = field(default_factory=list)
    sentiment: list = field(default_factory=list)
    vix: list = field(default_factory=list)


@dataclass(frozen=True)
class DriftShock:
    """Override drift/vol (annualised) for `days` trading days from `start_day`."""
    start_day: int
    days: int
    mu: float
    sigma: float


# ========================================
# CSV parsing helpers
# ========================================

def _read_feed(path, columns):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feed file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataValidationError(path, 1, "file is empty (header row required)")
    except pd.errors.ParserError as e:
        raise DataValidationError(path, None, f"malformed CSV: {e}")
    header = [c.strip() for c in frame.columns]
    if header != columns:
        raise DataValidationError(path, 1, f"header {header} does not match {columns}")
    frame.columns = header
    # data rows start on file line 2
    frame.index = pd.RangeIndex(2, len(frame) + 2)
    return frame.fillna("")


def _first_bad(mask):
    return int(mask[mask].index[0])


def _parse_dates(frame, column, path):
    text = frame[column].str.strip()
    parsed = pd.to_datetime(text, format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna()
    if bad.any():
        line = _first_bad(bad)
        raise DataValidationError(path, line, f"column '{column}' is not an ISO date: {text[line]!r}")
    return parsed.dt.date


def _parse_numbers(frame, column, path, optional=False):
    text = frame[column].str.strip()
    parsed = pd.to_numeric(text, errors="coerce")
    bad = parsed.isna() | ~np.isfinite(parsed.fillna(0.0))
    if optional:
        bad &= text != ""
    if bad.any():
        line = _first_bad(bad)
        raise DataValidationError(path, line, f"column '{column}' is not a number: {text[line]!r}")
    return parsed.astype(np.float64)


def _parse_counts(frame, column, path):
    values = _parse_numbers(frame, column, path)
    bad = (values < 0) | (values != np.floor(values))
    if bad.any():
        line = _first_bad(bad)
        raise DataValidationError(path, line, f"column '{column}' must be a non-negative integer, got {values[line]}")
    return values.astype(np.int64)


def _check(mask, path, message_fn):
    if mask.any():
        line = _first_bad(mask)
        raise DataValidationError(path, line, message_fn(line))


def _check_dates(dates, path, strict):
    """Dates must be increasing (strictly for one-row-per-day feeds)."""
    previous = None
    seen = set()
    for line, d in dates.items():
        if strict and d in seen:
            raise DataValidationError(path, line, f"duplicate date {d.isoformat()}")
        if previous is not None and d < previous:
            raise DataValidationError(path, line, f"non-monotone date {d.isoformat()} after {previous.isoformat()}")
        seen.add(d)
        previous = d


# ========================================
# Loaders
# ========================================

def load_bars(path):
    """Load and validate daily OHLCV bars (one row per date, increasing)."""
    frame = _read_feed(path, BAR_COLUMNS)
    dates = _parse_dates(frame, 'date', path)
    prices = {c: _parse_numbers(frame, c, path) for c in ('open', 'high', 'low', 'close')}
    volume = _parse_counts(frame, 'volume', path)

    for column, values in prices.items():
        _check(values <= 0, path, lambda line, c=column: f"non-positive {c} price {prices[c][line]} on {dates[line]}")
    _check(prices['low'] > np.minimum(prices['open'], prices['close']), path,
           lambda line: f"low above min(open, close) on {dates[line]}")
    _check(prices['high'] < np.maximum(prices['open'], prices['close']), path,
           lambda line: f"high below max(open, close) on {dates[line]}")
    _check_dates(dates, path, strict=True)

    return [
        Bar(d, float(o), float(h), float(lo), float(c), int(v))
        for d, o, h, lo, c, v in zip(dates, prices['open'], prices['high'], prices['low'],
                                      prices['close'], volume)
    ]


def load_option_chain(path):
    """Load and validate an option chain (many quotes per date)."""
    frame = _read_feed(path, OPTION_COLUMNS)
    dates = _parse_dates(frame, 'date', path)
    expiries = _parse_dates(frame, 'expiry', path)
    strike = _parse_numbers(frame, 'strike', path)
    bid = _parse_numbers(frame, 'bid', path)
    ask = _parse_numbers(frame, 'ask', path)
    delta = _parse_numbers(frame, 'delta', path, optional=True)
    volume = _parse_counts(frame, 'volume', path)
    open_interest = _parse_counts(frame, 'open_interest', path)
    right = frame['right'].str.strip().str.lower()

    _check(~right.isin(['put', 'call']), path, lambda line: f"right must be put|call, got {right[line]!r}")
    _check(strike <= 0, path, lambda line: f"non-positive strike {strike[line]}")
    _check(bid < 0, path, lambda line: f"negative bid {bid[line]}")
    _check(bid > ask, path, lambda line: f"bid {bid[line]} above ask {ask[line]}")
    _check(expiries < dates, path, lambda line: f"expiry {expiries[line]} before quote date {dates[line]}")
    has_delta = delta.notna()
    _check(has_delta & (right == 'put') & ((delta < -1) | (delta > 0)), path,
           lambda line: f"put delta {delta[line]} outside [-1, 0]")
    _check(has_delta & (right == 'call') & ((delta < 0) | (delta > 1)), path,
           lambda line: f"call delta {delta[line]} outside [0, 1]")
    _check_dates(dates, path, strict=False)
    keys = pd.DataFrame({'d': dates, 'e': expiries, 'k': strike, 'r': right})
    _check(keys.duplicated(), path, lambda line: f"duplicate contract quote on {dates[line]}")

    return [
        OptionQuote(d, e, float(k), r, float(b), float(a),
                    None if math.isnan(dl) else float(dl), int(v), int(oi))
        for d, e, k, r, b, a, dl, v, oi in zip(dates, expiries, strike, right, bid, ask,
                                                delta, volume, open_interest)
    ]


def load_sentiment(path):
    """Load sentiment scores (several records per date allowed)."""
    frame = _read_feed(path, SENTIMENT_COLUMNS)
    dates = _parse_dates(frame, 'date', path)
    score = _parse_numbers(frame, 'score', path)
    _check((score < 0) | (score > 100), path, lambda line: f"sentiment score {score[line]} outside [0, 100]")
    _check_dates(dates, path, strict=False)
    return [SentimentRecord(d, float(s)) for d, s in zip(dates, score)]


def load_vix(path):
    """Load daily VIX levels (one row per date)."""
    frame = _read_feed(path, VIX_COLUMNS)
    dates = _parse_dates(frame, 'date', path)
    level = _parse_numbers(frame, 'level', path)
    _check(level <= 0, path, lambda line: f"non-positive VIX level {level[line]}")
    _check_dates(dates, path, strict=True)
    return [VixRecord(d, float(v)) for d, v in zip(dates, level)]


def load_dataset(data_dir, files=None):
    """Load all four feeds from a directory; missing optional feeds load empty."""
    data_dir = Path(data_dir)
    files = {**FEED_FILES, **(files or {})}
    bars = load_bars(data_dir / files['bars'])
    feeds = {}
    for name, loader in (('options', load_option_chain), ('sentiment', load_sentiment), ('vix', load_vix)):
        path = data_dir / files[name]
        if path.exists():
            feeds[name] = loader(path)
        else:
            logger.warning(f"⚠️  {name} feed not found at {path}; continuing without it")
            feeds[name] = []
    print(f"📥 Loaded {len(bars)} bars, {len(feeds['options'])} option quotes, "
          f"{len(feeds['sentiment'])} sentiment and {len(feeds['vix'])} VIX records from {data_dir}")
    return MarketDataset(bars, feeds['options'], feeds['sentiment'], feeds['vix'])


# ========================================
# Writers
# ========================================

def _write_feed(rows, columns, path):
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return Path(path)


def write_bars(bars, path):
    rows = [(b.date.isoformat(), b.open, b.high, b.low, b.close, b.volume) for b in bars]
    return _write_feed(rows, BAR_COLUMNS, path)


def write_option_chain(quotes, path):
    rows = [(q.date.isoformat(), q.expiry.isoformat(), q.strike, q.right, q.bid, q.ask,
             "" if q.delta is None else repr(q.delta), q.volume, q.open_interest) for q in quotes]
    return _write_feed(rows, OPTION_COLUMNS, path)


def write_sentiment(records, path):
    return _write_feed([(r.date.isoformat(), r.score) for r in records], SENTIMENT_COLUMNS, path)


def write_vix(records, path):
    return _write_feed([(r.date.isoformat(), r.level) for r in records], VIX_COLUMNS, path)


def write_dataset(dataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {
        'bars': write_bars(dataset.bars, out_dir / FEED_FILES['bars']),
        'options': write_option_chain(dataset.options, out_dir / FEED_FILES['options']),
        'sentiment': write_sentiment(dataset.sentiment, out_dir / FEED_FILES['sentiment']),
        'vix': write_vix(dataset.vix, out_dir / FEED_FILES['vix']),
    }


# ========================================
# Calendar alignment
# ========================================

def _fill_to_calendar(values_by_date, calendar, default):
    """Forward-fill a sparse daily series onto the calendar, back-filling the leading gap."""
    if not values_by_date:
        return [default] * len(calendar)
    series = pd.Series(values_by_date, dtype=np.float64)
    series.index = pd.to_datetime(list(series.index))
    series = series.sort_index()
    target = pd.to_datetime(calendar)
    filled = series.reindex(series.index.union(target)).ffill().bfill().reindex(target)
    return [float(v) for v in filled]


def align_calendar(bars, chain=(), sentiment=(), vix=(), require_sentiment=False, require_vix=False):
    """
    One MarketSlice per bar date. Sentiment and VIX are forward-filled across
    gaps (first value back-filled); puts attach by exact date match.
    """
    if not bars:
        raise DataValidationError(None, None, "bar series is empty")
    if require_sentiment and not sentiment:
        raise DataValidationError(None, None, "sentiment feed is empty but the run requires it")
    if require_vix and not vix:
        raise DataValidationError(None, None, "VIX feed is empty but the run requires it")

    calendar = [b.date for b in bars]

    scores = defaultdict(list)
    for record in sentiment:
        scores[record.date].append(record.score)
    daily_sentiment = {d: aggregate_sentiment(s) for d, s in scores.items()}
    sent_filled = _fill_to_calendar(daily_sentiment, calendar, NEUTRAL_SENTIMENT)
    vix_filled = _fill_to_calendar({r.date: r.level for r in vix}, calendar, NEUTRAL_VIX)

    puts_by_date = defaultdict(list)
    for quote in chain:
        if quote.right == 'put':
            puts_by_date[quote.date].append(quote)

    slices = []
    for bar, sent, level in zip(bars, sent_filled, vix_filled):
        puts = tuple(sorted(puts_by_date.get(bar.date, ()), key=lambda q: (q.expiry, q.strike)))
        slices.append(MarketSlice(bar.date, bar, puts, sent, level))

    empty_chain_days = sum(1 for s in slices if not s.puts)
    if empty_chain_days:
        logger.info(f"{empty_chain_days} of {len(slices)} trading days carry no put quotes")
    return slices


def align_dataset(dataset, require_sentiment=False, require_vix=False):
    return align_calendar(dataset.bars, dataset.options, dataset.sentiment, dataset.vix,
                          require_sentiment=require_sentiment, require_vix=require_vix)


# ========================================
# Synthetic dataset generation
# ========================================

def _floor_cents(x):
    return math.floor(x * 100.0) / 100.0


def _ceil_cents(x):
    return math.ceil(x * 100.0) / 100.0


def synth_generate(seed, n_days, s0=100.0, mu=0.08, sigma=0.2, r=0.02, start=SYNTH_START, shocks=()):
    """
    Seeded four-feed dataset: GBM closes, a daily 11-strike put ladder at
    ~30 calendar days priced by Black-Scholes, neutral-centred sentiment
    noise and a VIX tracking the day's annualised vol.

    `shocks` temporarily replace mu/sigma (e.g. an embedded crash regime).
    Identical arguments give an identical dataset.
    """
    if n_days < 2:
        raise ValueError(f"n_days must be >= 2, got {n_days}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if s0 <= 0:
        raise ValueError(f"s0 must be > 0, got {s0}")

    rng = np.random.default_rng(seed)
    dt = 1.0 / 252.0
    calendar = [ts.date() for ts in pd.bdate_range(start=start, periods=n_days)]

    mu_t = np.full(n_days, float(mu))
    sigma_t = np.full(n_days, float(sigma))
    for shock in shocks:
        window = slice(shock.start_day, shock.start_day + shock.days)
        mu_t[window] = shock.mu
        sigma_t[window] = shock.sigma

    z = rng.standard_normal(n_days - 1)
    log_returns = (mu_t[1:] - 0.5 * sigma_t[1:] ** 2) * dt + sigma_t[1:] * math.sqrt(dt) * z
    raw_closes = s0 * np.exp(np.concatenate([[0.0], np.cumsum(log_returns)]))
    closes = np.round(raw_closes, 2)
    wicks = rng.uniform(0.0, 0.5, size=(n_days, 2)) * sigma_t[:, None] * math.sqrt(dt)
    volumes = rng.integers(500_000, 1_500_000, size=n_days)
    sentiment_noise = np.clip(rng.standard_normal(n_days), -3.0, 3.0)
    vix_noise = rng.standard_normal(n_days)

    bars, options, sentiment, vix = [], [], [], []
    previous_close = round(float(s0), 2)
    for t, day in enumerate(calendar):
        close = float(closes[t])
        open_ = previous_close
        high = _ceil_cents(max(open_, close) * (1.0 + wicks[t, 0]))
        low = _floor_cents(min(open_, close) * (1.0 - wicks[t, 1]))
        bars.append(Bar(day, open_, high, low, close, int(volumes[t])))
        previous_close = close

        expiry = (pd.Timestamp(day) + pd.Timedelta(days=SYNTH_DTE_DAYS) + pd.offsets.BDay(0)).date()
        tau = year_fraction(day, expiry)
        half = SYNTH_STRIKES // 2
        for j in range(-half, half + 1):
            strike = round(close * (1.0 + SYNTH_STRIKE_STEP * j), 2)
            inputs = PricingInputs(close, strike, tau, r, float(sigma_t[t]))
            theo = bs_put_price(inputs)
            spread = max(SYNTH_MIN_SPREAD, SYNTH_SPREAD_RATE * theo)
            bid = max(_floor_cents(theo - spread / 2.0), 0.0)
            ask = _ceil_cents(theo + spread / 2.0)
            options.append(OptionQuote(day, expiry, strike, 'put', bid, ask,
                                       round(bs_put_delta(inputs), 6),
                                       SYNTH_OPTION_VOLUME, SYNTH_OPEN_INTEREST))

        sentiment.append(SentimentRecord(day, round(float(NEUTRAL_SENTIMENT + 15.0 * sentiment_noise[t]), 2)))
        level = max(float(sigma_t[t]) * 100.0 + float(vix_noise[t]), 1.0)
        vix.append(VixRecord(day, round(level, 2)))

    logger.info(f"Synthesised {n_days} days (seed={seed}, s0={s0}, mu={mu}, sigma={sigma}, shocks={len(shocks)})")
    return MarketDataset(bars, options, sentiment, vix)
