"""Tests for the daily desk loop, the training environment and the backtest driver."""
from dataclasses import replace
from datetime import date, timedelta

import numpy as np
import pytest

from scripts.backtest.agents import D_MSG, ObservationLayout, PolicyError
from scripts.backtest.baselines import parse_strategy
from scripts.backtest.coordinator import (
    DayAbortError,
    Desk,
    DeskAgents,
    DeskEnvironment,
    DeskSettings,
    checkpoint_name,
    hedge_phase,
    make_cycle_fn,
    open_day,
    resolve_test_range,
    run_backtest,
    run_days,
    select_put,
    step_day,
    trade_phase,
)
from scripts.backtest.market_data import (
    Bar,
    DataValidationError,
    DriftShock,
    MarketSlice,
    OptionQuote,
    synth_generate,
)
from scripts.backtest.options_pricing import PutSpec
from scripts.backtest.portfolio import PortfolioState, Position
from scripts.backtest.rl_core import LearnerConfig, init_policy
from scripts.backtest.run_log import RunLogger
from scripts.backtest.signals import compute_signals

DAY = date(2024, 3, 1)
SMALL = LearnerConfig(hidden=(8,))


def _put(strike, expiry, volume=100, delta=-0.5, bid=4.5, ask=5.0, day=DAY):
    return OptionQuote(day, expiry, strike, 'put', bid, ask, delta, volume, 100)


def _slice(close=100.0, puts=(), day=DAY):
    return MarketSlice(day, Bar(day, close, close, close, close, 1000), tuple(puts), 50.0, 20.0)


def _policy(squash, seed, layout=ObservationLayout()):
    return init_policy('ClippedPG', layout.dim, squash, np.random.default_rng(seed), SMALL)


def test_select_put_prefers_target_expiry_then_nearest_strike():
    near, far = DAY + timedelta(days=28), DAY + timedelta(days=35)
    market = _slice(101.0, [_put(100.0, far), _put(95.0, near), _put(100.0, near), _put(102.0, near),
                            _put(101.0, near, volume=0)])
    chosen = select_put(market, 30)
    assert (chosen.expiry, chosen.strike) == (near, 100.0)


def test_select_put_ties_and_empty_chain():
    early, late = DAY + timedelta(days=25), DAY + timedelta(days=35)
    market = _slice(100.0, [_put(98.0, late), _put(102.0, early), _put(98.0, early)])
    chosen = select_put(market, 30)
    assert (chosen.expiry, chosen.strike) == (early, 98.0)
    assert select_put(_slice(100.0, [_put(100.0, DAY)]), 30) is None
    assert select_put(_slice(), 30) is None


def test_hedge_phase_buys_the_shortfall():
    expiry = DAY + timedelta(days=30)
    desk = Desk(DeskSettings(), DAY)
    ctx = open_day(desk, _slice(100.0, [_put(100.0, expiry)]), None)
    trade_phase(desk, ctx, 0.5)
    assert ctx.state.shares == 499
    hedge_phase(desk, ctx, 1.0)
    assert ctx.state.contracts == 10
    option_records = [r for r in ctx.records if r.kind == 'option']
    assert len(option_records) == 1 and option_records[0].quantity == 10
    hedge_phase(desk, ctx, 1.0)
    assert ctx.state.contracts == 10


def test_hedge_phase_skips_zero_alpha_and_flat_book():
    expiry = DAY + timedelta(days=30)
    desk = Desk(DeskSettings(), DAY)
    ctx = open_day(desk, _slice(100.0, [_put(100.0, expiry)]), None)
    hedge_phase(desk, ctx, 1.0)
    assert ctx.state.contracts == 0
    trade_phase(desk, ctx, 0.5)
    hedge_phase(desk, ctx, 0.0)
    assert ctx.state.contracts == 0 and all(r.kind == 'equity' for r in ctx.records)


def test_settlement_cash_funds_the_same_day_trade():
    desk = Desk(DeskSettings(), DAY)
    desk.state = PortfolioState(DAY, 0.0, 0, (Position(PutSpec(110.0, DAY), 2, 3.0),))
    agents = DeskAgents(parse_strategy('kdj_rsi'), trade_rule=lambda market: 1.0)
    ctx = step_day(desk, _slice(100.0), None, agents)
    assert ctx.settlement_cash == pytest.approx(2000.0)
    # 19 * 100 * 1.002 = 1903.80 fits in 2000, 20 shares do not
    assert desk.state.shares == 19 and desk.state.positions == ()
    assert [r.kind for r in desk.trades] == ['settlement', 'equity']
    assert desk.state.cash == pytest.approx(2000.0 - 1903.80)
    assert desk.equity[0] == pytest.approx(2000.0 - 1903.80 + 1900.0)


def test_failed_day_leaves_desk_untouched():
    spec = parse_strategy('kdj_rsi')
    days = [_slice(100.0 + i, day=DAY + timedelta(days=i)) for i in range(3)]
    good = DeskAgents(spec, trade_rule=lambda market: 1.0)
    desk = run_days(DeskSettings(), days[:2], [None, None], good)
    before = (desk.state, list(desk.equity), list(desk.trades), desk.prev_sr, desk.day_index)

    def explode(market):
        raise RuntimeError("feed glitch")

    with pytest.raises(DayAbortError) as info:
        step_day(desk, days[2], None, DeskAgents(spec, trade_rule=explode))
    assert info.value.date == days[2].date
    assert isinstance(info.value.cause, RuntimeError)
    assert (desk.state, desk.equity, desk.trades, desk.prev_sr, desk.day_index) == before


def test_out_of_order_day_aborts():
    spec = parse_strategy('buy_and_hold')
    desk = run_days(DeskSettings(), [_slice()], [None], DeskAgents(spec))
    with pytest.raises(DayAbortError):
        step_day(desk, _slice(), None, DeskAgents(spec))


def test_aborted_day_is_logged(synth_slices):
    spec = parse_strategy('kdj_rsi')
    run = RunLogger('test')

    def explode(market):
        raise RuntimeError("boom")

    with pytest.raises(DayAbortError):
        run_days(DeskSettings(), synth_slices[:3], [None] * 3, DeskAgents(spec, trade_rule=explode), run)
    assert run.events_of('day_aborted')[0]['date'] == synth_slices[0].date.isoformat()


def test_messages_cross_to_the_other_agent(synth_slices):
    days = synth_slices[:3]
    agents = DeskAgents(parse_strategy('deltahedge'), trader=_policy('tanh', 1), hedger=_policy('sigmoid', 2))
    desk = run_days(DeskSettings(), days, compute_signals(days), agents)
    assert len(desk.hedging_inbox) == 3 and all(m.sender == 'trading' for m in desk.hedging_inbox)
    assert len(desk.trading_inbox) == 3 and all(m.sender == 'hedging' for m in desk.trading_inbox)
    assert desk.trading_inbox[0].summary.shape == (D_MSG,)
    assert len(desk.equity) == 3 and len(desk.returns) == 2


def test_environment_rewards_telescope(synth_slices):
    days = synth_slices[:12]
    env = DeskEnvironment('trading', days, compute_signals(days), DeskAgents(parse_strategy('no_hedge')),
                          DeskSettings(sharpe_window=5), None, ObservationLayout())
    obs = env.reset()
    assert obs.shape == (env.observation_dim,) and env.squash == 'tanh'
    total, done, steps, info = 0.0, False, 0, {}
    while not done:
        obs, reward, done, info = env.step(0.3 if steps % 2 == 0 else -0.2)
        total += reward
        steps += 1
    assert steps == len(days)
    assert info['date'] == days[-1].date
    assert total == pytest.approx(info['sr'], abs=1e-12)
    assert np.array_equal(env.reset(), DeskEnvironment('trading', days, compute_signals(days),
                                                       DeskAgents(parse_strategy('no_hedge')),
                                                       DeskSettings(sharpe_window=5), None,
                                                       ObservationLayout()).reset())


def test_environment_validation(synth_slices):
    agents = DeskAgents(parse_strategy('deltahedge'))
    with pytest.raises(ValueError):
        DeskEnvironment('pricing', synth_slices[:5], [None] * 5, agents, DeskSettings(), None, ObservationLayout())
    with pytest.raises(ValueError):
        DeskEnvironment('hedging', synth_slices[:1], [None], agents, DeskSettings(), None, ObservationLayout())


def test_resolve_test_range(fast_config, synth_slices):
    dates = [s.date for s in synth_slices]
    assert resolve_test_range(fast_config, synth_slices) == (60, len(dates))
    bounded = fast_config.with_overrides(run={'start': dates[80], 'end': dates[99]})
    assert resolve_test_range(bounded, synth_slices) == (80, 100)
    empty = fast_config.with_overrides(run={'start': dates[-1] + timedelta(days=10)})
    with pytest.raises(DataValidationError):
        resolve_test_range(empty, synth_slices)


def test_buy_and_hold_backtest(fast_config, synth_dataset):
    config = fast_config.with_overrides(run={'strategy': 'buy_and_hold'})
    report = run_backtest(config, synth_dataset)
    assert len(report.dates) == 100 and len(report.returns) == 99
    equity_trades = [t for t in report.trades if t.kind == 'equity']
    assert len(equity_trades) == 1 and equity_trades[0].date == report.dates[0]
    assert not [t for t in report.trades if t.kind == 'option']
    assert report.equity[0] == pytest.approx(config.run.initial_cash - equity_trades[0].cost)
    assert report.metrics is not None and report.selections == []

    buy = equity_trades[0]
    cash = config.run.initial_cash - buy.quantity * buy.price - buy.cost
    closes = {bar.date: bar.close for bar in synth_dataset.bars}
    for day, value in zip(report.dates, report.equity):
        assert value == pytest.approx(cash + buy.quantity * closes[day], rel=1e-12)


def test_buy_and_hold_total_return_without_costs(fast_config, synth_dataset):
    config = fast_config.with_overrides(run={'strategy': 'buy_and_hold'},
                                        costs={'equity_rate': 0.0, 'option_fixed_per_contract': 0.0,
                                               'option_prop_rate': 0.0})
    report = run_backtest(config, synth_dataset)
    closes = {bar.date: bar.close for bar in synth_dataset.bars}
    first, last = closes[report.dates[0]], closes[report.dates[-1]]
    shares = report.trades[0].quantity
    assert shares == int(config.run.initial_cash // first)
    expected = shares * (last - first) / config.run.initial_cash
    assert report.metrics.TR == pytest.approx(expected, abs=1e-9)


def test_ablations_never_buy_puts(fast_config, synth_dataset):
    for strategy in ('no_hedge', 'standalone_rl'):
        report = run_backtest(fast_config.with_overrides(run={'strategy': strategy}), synth_dataset)
        assert not [t for t in report.trades if t.kind == 'option']
        assert report.selections == []


def test_single_hedger_logs_one_candidate_per_cycle(fast_config, synth_dataset):
    config = fast_config.with_overrides(run={'strategy': 'single_hedger:ClippedPG'})
    report = run_backtest(config, synth_dataset)
    starts = [row.cycle_start for row in report.selections]
    assert len(starts) == len(set(starts)) == 3
    assert all(row.candidate == 'ClippedPG' and row.selected for row in report.selections)


def test_deltahedge_backtest_selects_per_cycle_and_is_deterministic(fast_config, synth_dataset):
    first = run_backtest(fast_config, synth_dataset, RunLogger('backtest'))
    second = run_backtest(fast_config, synth_dataset, RunLogger('backtest'))
    assert first.equity == second.equity
    assert first.trades == second.trades
    starts = sorted({row.cycle_start for row in first.selections})
    assert len(starts) == 3
    for start in starts:
        rows = [r for r in first.selections if r.cycle_start == start]
        assert sum(r.selected for r in rows) == 1
    assert first.events == second.events


def test_missing_checkpoints_raise(fast_config, synth_dataset, tmp_path):
    config = fast_config.with_overrides(run={'strategy': 'no_hedge'}, rl={'checkpoints': str(tmp_path)})
    with pytest.raises(PolicyError):
        run_backtest(config, synth_dataset)


def test_checkpoint_names():
    assert checkpoint_name('trading') == 'trader.json'
    assert checkpoint_name('hedging', 'AdvantageAC') == 'hedger_AdvantageAC.json'


@pytest.mark.slow
def test_crash_regime_drawdowns(fast_config):
    """Reports deltahedge vs buy_and_hold drawdown on a crash-embedded market; ordering is not asserted."""
    dataset = synth_generate(11, 400, shocks=(DriftShock(250, 30, -1.5, 0.6),))
    config = fast_config.with_overrides(rl={'train_days': 120, 'timesteps': 512})
    drawdowns = {}
    for strategy in ('buy_and_hold', 'deltahedge'):
        report = run_backtest(config.with_overrides(run={'strategy': strategy}), dataset)
        drawdowns[strategy] = report.metrics.MDD
    print(f"MDD buy_and_hold={drawdowns['buy_and_hold']:.4f} deltahedge={drawdowns['deltahedge']:.4f}")
    assert all(0.0 <= mdd < 1.0 for mdd in drawdowns.values())


def _crash_after(slices, boundary):
    def halve(bar):
        return replace(bar, open=bar.open / 2, high=bar.high / 2, low=bar.low / 2, close=bar.close / 2)
    return list(slices[:boundary]) + [replace(s, bar=halve(s.bar), sentiment=5.0, vix=80.0)
                                      for s in slices[boundary:]]


def test_cycle_selection_ignores_days_after_the_boundary(fast_config, synth_slices):
    spec = parse_strategy('deltahedge')
    trader = _policy('tanh', 4, ObservationLayout(spec.include_options, spec.include_context))
    boundary = 100

    def cycle(slices):
        _, cycle_fn = make_cycle_fn(fast_config, slices, compute_signals(slices), spec, DeskSettings(), trader, 3)
        return cycle_fn(boundary, 1, None)

    before, after = cycle(synth_slices), cycle(_crash_after(synth_slices, boundary))
    assert after.selected == before.selected
    assert [c.metric for c in after.candidates] == [c.metric for c in before.candidates]
    for a, b in zip(after.candidates, before.candidates):
        np.testing.assert_array_equal(a.validation_returns, b.validation_returns)
