"""
Coordinator - Daily Desk Loop and Backtest Driver

DAILY ORDER (step_day):
1. Attach the day's market slice
2. Settle expired puts (cash lands before any trading)
3. Read forecast f, sentiment and regime for the day
4. Trading decision a -> apply_equity_trade at the close
5. Hedge ratio alpha -> target contracts -> buy the shortfall on the
   selected near-the-money ~30 DTE put (held puts run to expiry)
6. Value V_t, return, rolling Sharpe, shared reward R_t; both agents'
   decision summaries stored for the next day's context exchange
7. Advance the desk to the new state

ATOMICITY:
Steps 1-6 work on a DayContext copy; only commit() touches the desk. Any
failure raises DayAbortError and leaves the desk as it was.

TRAINING:
DeskEnvironment drives the same phase functions for one learning agent
while the other agent's current policy (or rule) stays frozen.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from scripts.backtest.agents import (
    INBOX_WINDOW,
    ObservationLayout,
    PolicyError,
    build_observation,
    emit_message,
    fit_normalizer,
    hedging_policy_act,
    load_checkpoint,
    quote_delta,
    target_put_contracts,
    trading_policy_act,
)
from scripts.backtest.baselines import (
    KdjRsiTrader,
    buy_and_hold_rule,
    classic_delta_rule,
    parse_strategy,
)
from scripts.backtest.ensemble import RetrainSchedule, deployment_loop, run_cycle
from scripts.backtest.market_data import DataValidationError, align_dataset, load_dataset
from scripts.backtest.metrics import MetricsError, compute_metrics, regime_slice, windows_in_range
from scripts.backtest.options_pricing import PutSpec
from scripts.backtest.portfolio import (
    CostModel,
    PortfolioState,
    apply_equity_trade,
    apply_option_trade,
    portfolio_value,
    settle_expiries,
    settlement_records,
)
from scripts.backtest.rl_core import SharpeTracker, reward_step, rolling_sharpe, train_learner
from scripts.backtest.signals import MomentumForecaster, SignalConfig, compute_signals, regime_score

logger = logging.getLogger(__name__)

# Puts with less than this many calendar days left are not opened
MIN_ENTRY_DTE = 1
# Deltas closer to zero than this cannot size a hedge
MIN_SIZING_DELTA = 1e-6


class DayAbortError(RuntimeError):
    """A sub-operation failed; the day was not applied."""

    def __init__(self, day, cause):
        self.date = day
        self.cause = cause
        super().__init__(f"{day}: day aborted ({type(cause).__name__}: {cause})")


@dataclass(frozen=True)
class DeskSettings:
    cost_model: CostModel = CostModel()
    multiplier: int = 100
    rate: float = 0.0
    target_dte: int = 30
    sharpe_window: int = 60
    rf_daily: float = 0.0
    initial_cash: float = 100_000.0
    signal_config: SignalConfig = SignalConfig()

    @classmethod
    def from_config(cls, config):
        return cls(
            cost_model=config.costs.cost_model(),
            multiplier=config.costs.multiplier,
            rate=config.data.pricing_rate,
            target_dte=config.ensemble.target_dte,
            sharpe_window=config.rl.sharpe_window,
            rf_daily=config.metrics.rf_annual / config.metrics.periods,
            initial_cash=config.run.initial_cash,
            signal_config=config.signals.signal_config(),
        )


@dataclass(eq=False)
class DeskAgents:
    """Decision makers for steps 4 and 5."""
    spec: object
    trader: Optional[object] = None
    hedger: Optional[object] = None
    trade_rule: Optional[Callable] = None
    hedgers_by_date: Optional[dict] = None

    def hedger_on(self, day):
        if self.hedgers_by_date is not None and day in self.hedgers_by_date:
            return self.hedgers_by_date[day]
        return self.hedger


class Desk:
    """Mutable run state; single writer."""

    def __init__(self, settings, start_date):
        self.settings = settings
        self.state = PortfolioState(start_date, float(settings.initial_cash), 0, ())
        self.tracker = SharpeTracker(settings.sharpe_window, settings.rf_daily)
        self.prev_sr = None
        self.prev_value = None
        self.last_date = None
        self.day_index = 0
        self.trading_inbox = deque(maxlen=INBOX_WINDOW)
        self.hedging_inbox = deque(maxlen=INBOX_WINDOW)
        self.dates = []
        self.equity = []
        self.returns = []
        self.trades = []


@dataclass(eq=False)
class DayContext:
    date: date
    market: object
    signals: Optional[object]
    pre_state: PortfolioState
    state: PortfolioState
    regime: float = 0.0
    target: Optional[object] = None
    settlement_cash: float = 0.0
    records: list = field(default_factory=list)
    a: float = 0.0
    alpha: Optional[float] = None
    trading_obs: Optional[object] = None
    hedging_obs: Optional[object] = None
    value: Optional[float] = None
    daily_return: Optional[float] = None
    sr: Optional[float] = None
    reward: float = 0.0
    messages: list = field(default_factory=list)
    tracker: Optional[SharpeTracker] = None

    @property
    def post_state(self):
        return self.state

    @property
    def rewards(self):
        """The one shared scalar, as delivered to each agent."""
        return {'trading': self.reward, 'hedging': self.reward}


def select_put(market, target_dte=30):
    """
    Expiry closest to target_dte calendar days (earlier on ties), then the
    strike nearest spot (lower on ties), among puts with volume >= 1.
    """
    candidates = [q for q in market.puts
                  if q.volume >= 1 and (q.expiry - market.date).days >= MIN_ENTRY_DTE]
    if not candidates:
        return None
    best_expiry = min(candidates, key=lambda q: (abs((q.expiry - market.date).days - target_dte), q.expiry)).expiry
    same_expiry = [q for q in candidates if q.expiry == best_expiry]
    return min(same_expiry, key=lambda q: (abs(q.strike - market.close), q.strike))


# ========================================
# Phases
# ========================================

def open_day(desk, market, signals):
    """Steps 1-3: attach slice, settle expiries, read signals."""
    if desk.last_date is not None and market.date <= desk.last_date:
        raise ValueError(f"slice {market.date} is not after the last processed day {desk.last_date}")
    if signals is not None and signals.date != market.date:
        raise ValueError(f"signals dated {signals.date} supplied for {market.date}")
    state = desk.state.advance(market.date)
    records = settlement_records(state, market)
    settled, cash = settle_expiries(state, market)
    if signals is not None:
        regime = signals.regime
    else:
        regime = regime_score(0.0, market.sentiment, market.vix, desk.settings.signal_config, on=market.date).score
    return DayContext(market.date, market, signals, state, settled, regime,
                      select_put(market, desk.settings.target_dte), cash, records)


def observe(desk, ctx, role, normalizer, layout):
    inbox = desk.trading_inbox if role == 'trading' else desk.hedging_inbox
    return build_observation(
        ctx.state, ctx.market, ctx.signals,
        inbox=list(inbox) if layout.include_context else (),
        normalizer=normalizer, layout=layout, target=ctx.target,
        rate=desk.settings.rate, multiplier=desk.settings.multiplier,
    )


def trade_phase(desk, ctx, a):
    """Step 4."""
    ctx.a = float(a)
    ctx.state, record = apply_equity_trade(ctx.state, ctx.a, ctx.market.close, desk.settings.cost_model)
    if record.quantity:
        ctx.records.append(record)


def hedge_phase(desk, ctx, alpha):
    """Step 5: buy max(0, target - held) contracts of the selected put."""
    ctx.alpha = None if alpha is None else float(alpha)
    if not ctx.alpha or ctx.target is None or ctx.state.shares == 0:
        return
    delta = quote_delta(ctx.target, ctx.market, desk.settings.rate)
    if delta > -MIN_SIZING_DELTA:
        return
    multiplier = desk.settings.multiplier
    target = target_put_contracts(ctx.alpha, ctx.state.shares, delta, multiplier)
    shortfall = max(0, target - ctx.state.contracts)
    if shortfall == 0:
        return
    spec = PutSpec(ctx.target.strike, ctx.target.expiry, multiplier)
    ctx.state, record = apply_option_trade(ctx.state, spec, shortfall, ctx.target, desk.settings.cost_model)
    if record.quantity:
        ctx.records.append(record)


def close_day(desk, ctx, trader=None, hedger=None):
    """Step 6: value, return, rolling Sharpe, shared reward, decision summaries."""
    ctx.value = portfolio_value(ctx.state, ctx.market, desk.settings.rate)
    if not math.isfinite(ctx.value) or ctx.value <= 0:
        raise ValueError(f"portfolio value {ctx.value} on {ctx.date}")
    ctx.tracker = desk.tracker.copy()
    if desk.prev_value is not None:
        ctx.daily_return = ctx.value / desk.prev_value - 1.0
        ctx.tracker.push(ctx.daily_return)
    ctx.sr = rolling_sharpe(ctx.tracker)
    ctx.reward = reward_step(desk.prev_sr, ctx.sr)
    if trader is not None and ctx.trading_obs is not None:
        ctx.messages.append(emit_message(trader, ctx.trading_obs, 'trading'))
    if hedger is not None and ctx.hedging_obs is not None:
        ctx.messages.append(emit_message(hedger, ctx.hedging_obs, 'hedging'))


def commit(desk, ctx):
    """Step 7."""
    desk.state = ctx.state
    desk.tracker = ctx.tracker
    desk.prev_sr = ctx.sr
    desk.prev_value = ctx.value
    desk.last_date = ctx.date
    desk.day_index += 1
    for message in ctx.messages:
        # trading summaries feed the hedger and vice versa
        (desk.hedging_inbox if message.sender == 'trading' else desk.trading_inbox).append(message)
    desk.dates.append(ctx.date)
    desk.equity.append(ctx.value)
    if ctx.daily_return is not None:
        desk.returns.append(ctx.daily_return)
    desk.trades.extend(ctx.records)


def decide_trade(desk, ctx, agents, rng=None):
    spec = agents.spec
    if spec.trading == 'buy_and_hold':
        return buy_and_hold_rule(ctx.state, ctx.market, desk.day_index)[0]
    if spec.trading == 'kdj_rsi':
        return agents.trade_rule(ctx.market)
    trader = agents.trader
    ctx.trading_obs = observe(desk, ctx, 'trading', trader.normalizer, ObservationLayout.for_policy(trader))
    return trading_policy_act(ctx.trading_obs, trader, rng).a


def decide_hedge(desk, ctx, agents, rng=None):
    spec = agents.spec
    if spec.hedging == 'none':
        return None
    if spec.hedging == 'rule':
        return classic_delta_rule(ctx.state, ctx.market, ctx.regime)
    hedger = agents.hedger_on(ctx.date)
    if hedger is None:
        return None
    ctx.hedging_obs = observe(desk, ctx, 'hedging', hedger.normalizer, ObservationLayout.for_policy(hedger))
    return hedging_policy_act(ctx.hedging_obs, hedger, rng).alpha


def step_day(desk, market, signals, agents):
    """Run steps 1-7 for one trading day; DayAbortError leaves the desk untouched."""
    try:
        ctx = open_day(desk, market, signals)
        trade_phase(desk, ctx, decide_trade(desk, ctx, agents))
        hedge_phase(desk, ctx, decide_hedge(desk, ctx, agents))
        close_day(desk, ctx, agents.trader, agents.hedger_on(ctx.date))
    except Exception as e:
        raise DayAbortError(market.date, e) from e
    commit(desk, ctx)
    return ctx


def run_days(settings, slices, signals, agents, events=None):
    """Fresh desk over consecutive slices; returns the finished desk."""
    desk = Desk(settings, slices[0].date)
    for market, row in zip(slices, signals):
        try:
            step_day(desk, market, row, agents)
        except DayAbortError as e:
            if events is not None:
                events.log_event('day_aborted', date=e.date, error=str(e.cause))
            raise
    return desk


# ========================================
# Training environment
# ========================================

class DeskEnvironment:
    """
    One learning agent on the desk over a window of days. The other role is
    played by `agents` (frozen policy or rule). One episode = one pass.
    """

    def __init__(self, role, slices, signals, agents, settings, normalizer, layout, window=None):
        if role not in ('trading', 'hedging'):
            raise ValueError(f"unknown role '{role}'")
        if len(slices) < 2:
            raise ValueError(f"training window needs >= 2 days, got {len(slices)}")
        self.role = role
        self.slices = slices
        self.signals = signals
        self.agents = agents
        self.settings = settings
        self.normalizer = normalizer
        self.layout = layout
        self.include_options = layout.include_options
        self.include_context = layout.include_context
        self.observation_dim = layout.dim
        self.squash = 'tanh' if role == 'trading' else 'sigmoid'
        self.window = window or (slices[0].date, slices[-1].date)
        self.desk = None
        self.ctx = None
        self.t = 0

    def _open(self):
        self.ctx = open_day(self.desk, self.slices[self.t], self.signals[self.t])
        if self.role == 'hedging':
            trade_phase(self.desk, self.ctx, decide_trade(self.desk, self.ctx, self.agents))
        obs = observe(self.desk, self.ctx, self.role, self.normalizer, self.layout)
        if self.role == 'trading':
            self.ctx.trading_obs = obs
        return obs.vector

    def reset(self):
        self.desk = Desk(self.settings, self.slices[0].date)
        self.t = 0
        return self._open()

    def step(self, action):
        desk, ctx = self.desk, self.ctx
        if self.role == 'trading':
            trade_phase(desk, ctx, action)
            hedge_phase(desk, ctx, decide_hedge(desk, ctx, self.agents))
            close_day(desk, ctx, None, self.agents.hedger_on(ctx.date))
        else:
            hedge_phase(desk, ctx, action)
            close_day(desk, ctx, self.agents.trader, None)
        commit(desk, ctx)
        self.t += 1
        done = self.t >= len(self.slices)
        obs = np.zeros(self.observation_dim) if done else self._open()
        return obs, ctx.reward, done, {'sr': ctx.sr, 'date': ctx.date}


# ========================================
# Policy training
# ========================================

@dataclass
class TrainedPolicies:
    trader: Optional[object] = None
    hedger: Optional[object] = None
    candidates: dict = field(default_factory=dict)
    training_logs: dict = field(default_factory=dict)


def _round_seed(seed, *parts):
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *parts]).generate_state(1)[0])


def train_desk_policies(config, slices, signals, spec, settings, train_range, seed, candidates=False):
    """
    Joint training on [start, end): trader and hedger alternate for
    rl.joint_rounds rounds, each treating the other as fixed. With
    candidates=True every ensemble kind is also trained against the final
    trader (checkpoint set for the train command).
    """
    start, end = train_range
    if end - start < 2:
        raise DataValidationError(None, None, f"training window [{start}, {end}) holds fewer than 2 trading days")
    window_slices, window_signals = slices[start:end], signals[start:end]
    normalizer = fit_normalizer(window_slices, window_signals)
    window = (window_slices[0].date, window_slices[-1].date)
    rl = config.rl
    learner_config = rl.learner_config()
    trader_layout = ObservationLayout(spec.include_options, spec.include_context)
    hedger_layout = ObservationLayout(True, True)
    hedger_kind = spec.learner or config.ensemble.kinds[0]
    result = TrainedPolicies()

    def hedger_env(trader):
        frozen = DeskAgents(spec, trader=trader)
        return DeskEnvironment('hedging', window_slices, window_signals, frozen, settings, normalizer,
                               hedger_layout, window)

    for r in range(rl.joint_rounds):
        frozen = DeskAgents(spec, hedger=result.hedger)
        env = DeskEnvironment('trading', window_slices, window_signals, frozen, settings, normalizer,
                              trader_layout, window)
        log = result.training_logs.setdefault('trader', [])
        result.trader = train_learner(env, rl.trading_kind, rl.timesteps, _round_seed(seed, r, 0),
                                      learner_config, init=result.trader, log=log)
        if spec.retrains_hedger:
            log = result.training_logs.setdefault('hedger', [])
            result.hedger = train_learner(hedger_env(result.trader), hedger_kind, rl.timesteps,
                                          _round_seed(seed, r, 1), learner_config, init=result.hedger, log=log)
        logger.info(f"Joint round {r + 1}/{rl.joint_rounds} complete on {window[0]} .. {window[1]}")

    if candidates:
        for k, kind in enumerate(config.ensemble.kinds):
            if kind == hedger_kind and result.hedger is not None:
                result.candidates[kind] = result.hedger
                continue
            log = result.training_logs.setdefault(f"hedger_{kind}", [])
            result.candidates[kind] = train_learner(hedger_env(result.trader), kind, rl.timesteps,
                                                    _round_seed(seed, rl.joint_rounds, 2 + k), learner_config,
                                                    log=log)
    return result


def make_cycle_fn(config, slices, signals, spec, settings, trader, seed, events=None):
    """Bind ensemble.run_cycle to desk training and validation."""
    schedule = RetrainSchedule(config.ensemble.cycle_days, config.ensemble.lookback_days,
                               config.ensemble.validation_days)
    kinds = [spec.learner] if spec.hedging == 'single' else list(config.ensemble.kinds)
    learner_config = config.rl.learner_config()
    validation_settings = settings if config.ensemble.validation_costs else replace(settings, cost_model=CostModel.zero())
    dates = [s.date for s in slices]

    def train_fn(kind, candidate_seed, train_range):
        start, end = train_range
        window_slices, window_signals = slices[start:end], signals[start:end]
        env = DeskEnvironment('hedging', window_slices, window_signals, DeskAgents(spec, trader=trader), settings,
                              fit_normalizer(window_slices, window_signals), ObservationLayout(True, True))
        return train_learner(env, kind, config.rl.retrain_timesteps, candidate_seed, learner_config)

    def validate_fn(policy, validation_range):
        start, end = validation_range
        desk = run_days(validation_settings, slices[start:end], signals[start:end],
                        DeskAgents(spec, trader=trader, hedger=policy))
        return np.asarray(desk.returns)

    def cycle_fn(boundary, cycle, previous):
        return run_cycle(dates, boundary, schedule, kinds, seed, train_fn, validate_fn, previous, cycle, events)

    return schedule, cycle_fn


# ========================================
# Backtest driver
# ========================================

@dataclass(eq=False)
class BacktestReport:
    strategy: str
    label: str
    seed: int
    dates: list
    equity: list
    returns: list
    trades: list
    metrics: Optional[object]
    regimes: dict
    selections: list
    config: dict
    events: list = field(default_factory=list)


def resolve_test_range(config, slices):
    """Inclusive-exclusive index range of the test period."""
    dates = [s.date for s in slices]
    run = config.run
    if run.start is not None:
        start = next((i for i, d in enumerate(dates) if d >= run.start), len(dates))
    else:
        start = min(config.rl.train_days, len(dates) - 1)
    end = len(dates)
    if run.end is not None:
        end = sum(1 for d in dates if d <= run.end)
    if end <= start:
        raise DataValidationError(None, None, f"date range {run.start} .. {run.end} matches no trading days "
                                              f"in dataset {dates[0]} .. {dates[-1]}")
    return start, end


def prepare_market(config, dataset=None):
    if dataset is None:
        files = {'bars': config.data.bars, 'options': config.data.options,
                 'sentiment': config.data.sentiment, 'vix': config.data.vix}
        dataset = load_dataset(config.data.dir, files)
    slices = align_dataset(dataset, config.data.require_sentiment, config.data.require_vix)
    forecaster = MomentumForecaster(config.signals.forecast_window, config.signals.forecast_horizon)
    signals = compute_signals(slices, forecaster, config.signals.signal_config())
    return slices, signals


def checkpoint_name(role, kind=None):
    return f"hedger_{kind}.json" if role == 'hedging' else 'trader.json'


def _load_policies(checkpoint_dir, spec, kinds):
    """Trader plus the initial hedger (single_hedger kind, else the first ensemble kind)."""
    checkpoint_dir = Path(checkpoint_dir)
    trader = load_checkpoint(checkpoint_dir / checkpoint_name('trading'))
    if (trader.include_options, trader.include_context) != (spec.include_options, spec.include_context):
        raise PolicyError(f"trader checkpoint in {checkpoint_dir} was trained with options={trader.include_options}, "
                          f"context={trader.include_context}; {spec.name} needs options={spec.include_options}, "
                          f"context={spec.include_context}")
    hedger = None
    if spec.retrains_hedger:
        name = checkpoint_name('hedging', spec.learner or kinds[0])
        hedger = load_checkpoint(checkpoint_dir / name)
    return TrainedPolicies(trader, hedger)


def run_backtest(config, dataset=None, events=None):
    """
    Whole-period backtest for config.run.strategy. Identical (config, seed,
    data) produce an identical report.

    Args:
        config: RunConfig
        dataset: in-memory Dataset; loaded from config.data when None
        events: RunLogger receiving substitutions, retained policies and aborts

    Returns:
        BacktestReport over the resolved test range

    Raises:
        DataValidationError: empty test range or too little training history
        PolicyError: checkpoints that do not fit the strategy
        DayAbortError: a day failed; the desk is left as it was before that day
    """
    spec = parse_strategy(config.run.strategy)
    settings = DeskSettings.from_config(config)
    seed = config.run.seed
    slices, signals = prepare_market(config, dataset)
    start, end = resolve_test_range(config, slices)

    neutral = sum(1 for s in signals[:end] if not s.forecast_available)
    if neutral and events is not None:
        events.log_event('neutral_signals', days=neutral, substitute='f=0')

    agents = DeskAgents(spec)
    selections = []
    if spec.trading == 'kdj_rsi':
        agents.trade_rule = KdjRsiTrader([s.bar for s in slices])
    elif spec.uses_rl_trader:
        if config.rl.checkpoints:
            policies = _load_policies(config.rl.checkpoints, spec, config.ensemble.kinds)
        else:
            train_range = (max(0, start - config.rl.train_days), start)
            policies = train_desk_policies(config, slices, signals, spec, settings, train_range, seed)
        agents.trader, agents.hedger = policies.trader, policies.hedger
        if spec.retrains_hedger:
            schedule, cycle_fn = make_cycle_fn(config, slices, signals, spec, settings, agents.trader, seed, events)
            dates = [s.date for s in slices]
            agents.hedgers_by_date, cycles = deployment_loop(dates, (start, end), schedule, cycle_fn,
                                                             initial=agents.hedger)
            selections = [row for cycle in cycles for row in cycle.selection_rows()]

    desk = run_days(settings, slices[start:end], signals[start:end], agents, events)

    metrics, regimes = None, {}
    if len(desk.equity) >= 2:
        try:
            metrics = compute_metrics(desk.equity, config.metrics.rf_annual, config.metrics.periods, desk.dates)
            windows = windows_in_range(config.metrics.regime_windows(), desk.dates)
            regimes = regime_slice(desk.equity, desk.dates, windows, config.metrics.rf_annual,
                                   config.metrics.periods)
        except MetricsError as e:
            logger.warning(f"Metrics unavailable: {e}")

    logger.info(f"{spec.name}: {len(desk.equity)} day(s) {desk.dates[0]} .. {desk.dates[-1]}, "
                f"final value {desk.equity[-1]:.2f}, {len(desk.trades)} trade record(s)")
    return BacktestReport(
        strategy=spec.name,
        label=config.data.label,
        seed=seed,
        dates=desk.dates,
        equity=desk.equity,
        returns=desk.returns,
        trades=desk.trades,
        metrics=metrics,
        regimes=regimes,
        selections=selections,
        config=config.echo(),
        events=list(events.events) if events is not None else [],
    )
