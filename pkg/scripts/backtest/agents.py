"""
Agents - Observations, Actions, Hedge Sizing and Message Exchange

Both desk agents read the same kind of observation:

    [portfolio (4) | market (6) | target put (4) | context (8)]

- portfolio: equity weight, cash weight, hedge coverage, option weight
  (ratios of the current portfolio value)
- market: close, forecast f, sentiment, VIX, realised vol, intraday log
  return, z-scored with statistics frozen on the training window
- target put: strike distance, DTE / 30, mid / spot, put delta
- context: cross-attention read of the other agent's recent messages

The standalone trader drops the put and context blocks; the no-hedge
variant keeps the put block and receives a zero context.

CHECKPOINTS:
<stem>.json  header (kind, architectures, dims, seed, training window, normalizer)
<stem>.bin   flat parameter vector, little-endian float64
"""
import json
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np
from scipy.special import softmax

from scripts.backtest.options_pricing import (
    PricingError,
    PricingInputs,
    bs_put_delta,
    put_delta_from_quote,
    year_fraction,
)
from scripts.backtest.portfolio import portfolio_value
from scripts.backtest.rl_core import (
    Architecture,
    PolicyParams,
    approximator_hidden,
    policy_action,
)
from scripts.backtest.signals import NEUTRAL_SENTIMENT

logger = logging.getLogger(__name__)

D_MSG = 8
INBOX_WINDOW = 5
PORTFOLIO_FEATURES = 4
MARKET_FEATURES = 6
OPTION_FEATURES = 4
NORMALIZED_CLIP = 10.0
TARGET_DTE_DAYS = 30
MAX_HEDGE_COVERAGE = 10.0
CHECKPOINT_FORMAT = 'deltahedge-policy-v1'

# Fixed seeds for the attention query and message projections
QUERY_PROJECTION_SEED = 7001
MESSAGE_PROJECTION_SEED = 7002

SENDERS = ('trading', 'hedging')


class PolicyError(ValueError):
    """Policy/observation contract violation or unreadable checkpoint."""


@dataclass(frozen=True)
class TradingAction:
    a: float

    def __post_init__(self):
        if not -1.0 <= self.a <= 1.0:
            raise PolicyError(f"trading action {self.a} outside [-1, 1]")


@dataclass(frozen=True)
class HedgeRatio:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise PolicyError(f"hedge ratio {self.alpha} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class AgentMessage:
    date: date
    sender: str
    summary: np.ndarray

    def __post_init__(self):
        summary = np.asarray(self.summary, dtype=np.float64)
        if self.sender not in SENDERS:
            raise PolicyError(f"unknown message sender '{self.sender}'")
        if summary.shape != (D_MSG,):
            raise PolicyError(f"message summary must have length {D_MSG}, got {summary.shape}")
        if not np.all(np.isfinite(summary)):
            raise PolicyError(f"non-finite message summary from {self.sender} on {self.date}")
        object.__setattr__(self, 'summary', summary)


@dataclass(frozen=True)
class ObservationLayout:
    include_options: bool = True
    include_context: bool = True

    @property
    def base_dim(self):
        return PORTFOLIO_FEATURES + MARKET_FEATURES + (OPTION_FEATURES if self.include_options else 0)

    @property
    def dim(self):
        return self.base_dim + (D_MSG if self.include_context else 0)

    @classmethod
    def for_policy(cls, params):
        return cls(params.include_options, params.include_context)


@dataclass(frozen=True, eq=False)
class Observation:
    date: date
    vector: np.ndarray
    query: np.ndarray
    substituted: bool = False

    @property
    def dim(self):
        return self.vector.size


@dataclass(frozen=True, eq=False)
class FeatureNormalizer:
    """Per-feature z-score frozen on the training window."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or len(rows) == 0:
            raise PolicyError("normalizer needs a non-empty 2-D feature table")
        std = rows.std(axis=0)
        std = np.where(std < 1e-8, 1.0, std)
        return cls(rows.mean(axis=0).copy(), std.copy())

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, x):
        return np.clip((np.asarray(x, dtype=np.float64) - self.mean) / self.std, -NORMALIZED_CLIP, NORMALIZED_CLIP)

    def to_dict(self):
        return {'mean': [float(v) for v in self.mean], 'std': [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, payload):
        return cls(np.array(payload['mean'], dtype=np.float64), np.array(payload['std'], dtype=np.float64))


def _projection(rows, cols, seed):
    rng = np.random.default_rng([seed, rows, cols])
    return rng.standard_normal((rows, cols)) / math.sqrt(cols)


def query_projection(query_dim):
    return _projection(D_MSG, query_dim, QUERY_PROJECTION_SEED)


def message_projection(hidden_dim):
    return _projection(D_MSG, hidden_dim, MESSAGE_PROJECTION_SEED)


# ========================================
# Features
# ========================================

def market_features(market, signals=None):
    """Raw (un-normalised) market block for one slice."""
    if signals is None:
        f, sent, realized_vol = 0.0, NEUTRAL_SENTIMENT, 0.0
    else:
        f, sent, realized_vol = signals.f, signals.sent, signals.realized_vol
    intraday = math.log(market.bar.close / market.bar.open)
    return np.array([market.close, f, sent, market.vix, realized_vol, intraday], dtype=np.float64)


def fit_normalizer(slices, signals):
    """Normalizer over the market block of a training window."""
    rows = [market_features(m, s) for m, s in zip(slices, signals)]
    return FeatureNormalizer.fit(rows)


def quote_delta(quote, market, rate=0.0):
    """Put delta for sizing: vendor delta, else IV-implied, else BS at VIX vol."""
    tau = year_fraction(market.date, quote.expiry)
    try:
        return put_delta_from_quote(quote.delta, quote.mid, market.close, quote.strike, tau, rate)
    except PricingError:
        inputs = PricingInputs(market.close, quote.strike, tau, rate, max(market.vix, 1e-6) / 100.0)
        return bs_put_delta(inputs)


def option_features(market, target, rate=0.0):
    if target is None:
        return np.zeros(OPTION_FEATURES)
    return np.array([
        target.strike / market.close - 1.0,
        (target.expiry - market.date).days / TARGET_DTE_DAYS,
        target.mid / market.close,
        quote_delta(target, market, rate),
    ], dtype=np.float64)


def portfolio_features(state, market, value, multiplier=100):
    value = value if value > 0 else 1.0
    equity = market.close * state.shares
    coverage = min(state.contracts * multiplier / state.shares, MAX_HEDGE_COVERAGE) if state.shares else 0.0
    return np.array([equity / value, state.cash / value, coverage,
                     (value - equity - state.cash) / value], dtype=np.float64)


# ========================================
# Context exchange
# ========================================

def attention_weights(inbox, query, projection=None):
    """Softmax(q K^T / sqrt(d_msg)) over the inbox summaries."""
    if len(inbox) > INBOX_WINDOW:
        raise PolicyError(f"inbox holds {len(inbox)} messages, window is {INBOX_WINDOW}")
    if not inbox:
        return np.zeros(0)
    query = np.asarray(query, dtype=np.float64)
    projection = query_projection(query.size) if projection is None else projection
    q = projection @ query
    keys = np.stack([m.summary for m in inbox])
    return softmax(keys @ q / math.sqrt(D_MSG))


def exchange_context(inbox, query, projection=None):
    """Context vector c = attention-weighted mean of the inbox; zeros when empty."""
    if not inbox:
        return np.zeros(D_MSG)
    weights = attention_weights(inbox, query, projection)
    keys = np.stack([m.summary for m in inbox])
    return weights @ keys


def emit_message(params, observation, sender):
    """Decision summary: fixed projection of the actor's last hidden layer."""
    hidden = approximator_hidden(params.actor, params.actor_theta, observation.vector)
    return AgentMessage(observation.date, sender, message_projection(hidden.size) @ hidden)


# ========================================
# Observation
# ========================================

def build_observation(state, market, signals, inbox=(), normalizer=None, layout=ObservationLayout(),
                      target=None, value=None, rate=0.0, multiplier=100):
    """
    Deterministic observation for one agent on the slice date. A missing
    signal row substitutes f = 0 and sentiment = 50 (flagged on the result).
    """
    if market.date != state.date:
        raise PolicyError(f"observation built for {market.date} from a {state.date} portfolio")
    if signals is not None and signals.date != market.date:
        raise PolicyError(f"signals dated {signals.date} used on {market.date}")
    if value is None:
        value = portfolio_value(state, market, rate)

    raw_market = market_features(market, signals)
    normalizer = normalizer or FeatureNormalizer.identity(MARKET_FEATURES)
    blocks = [portfolio_features(state, market, value, multiplier), normalizer.transform(raw_market)]
    if layout.include_options:
        blocks.append(option_features(market, target, rate))
    query = np.concatenate(blocks)
    if layout.include_context:
        blocks.append(exchange_context(list(inbox), query))
    vector = np.concatenate(blocks)
    if not np.all(np.isfinite(vector)):
        raise PolicyError(f"non-finite observation on {market.date}: {vector}")
    return Observation(market.date, vector, query, substituted=signals is None)


def _check_policy(obs, policy, squash):
    if obs.dim != policy.obs_dim:
        raise PolicyError(f"observation has {obs.dim} features, {policy.kind} policy expects {policy.obs_dim}")
    if policy.squash != squash:
        raise PolicyError(f"{policy.kind} policy squashes with {policy.squash}, expected {squash}")


def trading_policy_act(obs, policy, rng=None):
    """a = tanh(mu(obs)); seeded Gaussian exploration when rng is given."""
    _check_policy(obs, policy, 'tanh')
    return TradingAction(float(np.clip(policy_action(policy, obs.vector, rng), -1.0, 1.0)))


def hedging_policy_act(obs, policy, rng=None):
    """alpha = sigmoid(mu(obs)); seeded Gaussian exploration when rng is given."""
    _check_policy(obs, policy, 'sigmoid')
    return HedgeRatio(float(np.clip(policy_action(policy, obs.vector, rng), 0.0, 1.0)))


def target_put_contracts(alpha, h, delta_put, multiplier=100, fractional=False):
    """
    Contracts for hedge ratio alpha: round(alpha * h / (|delta_put| * M)).
    fractional=True returns the unrounded count (delta-neutral check mode).

    Args:
        alpha: HedgeRatio or a float in [0, 1]
        h: shares held, >= 0
        delta_put: put delta, strictly negative
        multiplier: contract multiplier M

    Returns:
        int contracts, or a float when fractional=True
    """
    alpha = alpha.alpha if isinstance(alpha, HedgeRatio) else float(alpha)
    if not delta_put < 0:
        raise PolicyError(f"put delta must be negative for sizing, got {delta_put}")
    if h < 0:
        raise PolicyError(f"cannot size a hedge for negative shares {h}")
    if h == 0 or alpha == 0:
        return 0.0 if fractional else 0
    n = alpha * h / (abs(delta_put) * multiplier)
    if fractional:
        return n
    return int(math.floor(n + 0.5))


# ========================================
# Checkpoints
# ========================================

def save_checkpoint(params, stem):
    """Write <stem>.json and <stem>.bin; returns both paths."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    json_path, bin_path = stem.with_suffix('.json'), stem.with_suffix('.bin')
    header = {
        'format': CHECKPOINT_FORMAT,
        'kind': params.kind,
        'squash': params.squash,
        'actor': params.actor.to_dict(),
        'critic': params.critic.to_dict(),
        'dims': {'observation': params.obs_dim, 'parameters': int(params.theta.size)},
        'seed': params.seed,
        'training_window': [d.isoformat() for d in params.training_window] if params.training_window else None,
        'normalizer': params.normalizer.to_dict() if params.normalizer is not None else None,
        'include_options': params.include_options,
        'include_context': params.include_context,
        'params_file': bin_path.name,
    }
    json_path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    bin_path.write_bytes(params.theta.astype('<f8').tobytes())
    return json_path, bin_path


def load_checkpoint(path):
    path = Path(path)
    json_path = path if path.suffix == '.json' else path.with_suffix('.json')
    if not json_path.exists():
        raise PolicyError(f"checkpoint not found: {json_path}")
    try:
        header = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PolicyError(f"unreadable checkpoint header {json_path}: {e}")
    if header.get('format') != CHECKPOINT_FORMAT:
        raise PolicyError(f"{json_path} is not a {CHECKPOINT_FORMAT} checkpoint")
    bin_path = json_path.with_name(header['params_file'])
    if not bin_path.exists():
        raise PolicyError(f"checkpoint parameters not found: {bin_path}")
    theta = np.frombuffer(bin_path.read_bytes(), dtype='<f8').astype(np.float64)
    if theta.size != header['dims']['parameters']:
        raise PolicyError(f"{bin_path} holds {theta.size} parameters, header declares {header['dims']['parameters']}")
    window = header.get('training_window')
    normalizer = header.get('normalizer')
    try:
        return PolicyParams(
            kind=header['kind'],
            actor=Architecture(tuple(header['actor']['layers']), header['actor']['activation']),
            critic=Architecture(tuple(header['critic']['layers']), header['critic']['activation']),
            theta=theta,
            squash=header['squash'],
            normalizer=FeatureNormalizer.from_dict(normalizer) if normalizer else None,
            seed=header.get('seed'),
            training_window=tuple(date.fromisoformat(d) for d in window) if window else None,
            include_options=header.get('include_options', True),
            include_context=header.get('include_context', True),
        )
    except (KeyError, ValueError) as e:
        raise PolicyError(f"invalid checkpoint {json_path}: {e}")

