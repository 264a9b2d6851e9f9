"""Tests for observations, context exchange, action squashing, hedge sizing and checkpoints."""
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scripts.backtest.agents import (
    D_MSG,
    INBOX_WINDOW,
    AgentMessage,
    FeatureNormalizer,
    HedgeRatio,
    ObservationLayout,
    PolicyError,
    TradingAction,
    attention_weights,
    build_observation,
    emit_message,
    exchange_context,
    fit_normalizer,
    hedging_policy_act,
    load_checkpoint,
    save_checkpoint,
    target_put_contracts,
    trading_policy_act,
)
from scripts.backtest.market_data import Bar, MarketSlice
from scripts.backtest.portfolio import PortfolioState
from scripts.backtest.rl_core import LearnerConfig, PolicyParams, init_policy
from scripts.backtest.signals import compute_signals

DAY = date(2024, 3, 1)
SMALL = LearnerConfig(hidden=(8,))


def _message(values, sender='hedging', day=DAY):
    return AgentMessage(day, sender, np.asarray(values, dtype=np.float64))


def _slice(close=100.0, day=DAY):
    return MarketSlice(day, Bar(day, close, close + 1, close - 1, close, 1000), (), 50.0, 20.0)


def _zero_policy(squash, obs_dim=ObservationLayout().dim):
    params = init_policy('ClippedPG', obs_dim, squash, np.random.default_rng(0), SMALL)
    return params.with_theta(np.zeros_like(params.theta))


def test_layout_dimensions():
    assert ObservationLayout().dim == 22
    assert ObservationLayout(include_options=False).dim == 18
    assert ObservationLayout(include_context=False).dim == 14
    assert ObservationLayout(False, False).dim == 10


def test_empty_inbox_gives_zero_context():
    assert np.array_equal(exchange_context([], np.ones(14)), np.zeros(D_MSG))
    assert attention_weights([], np.ones(14)).size == 0


def test_singleton_and_identical_messages():
    rng = np.random.default_rng(3)
    m = _message(rng.standard_normal(D_MSG))
    query = rng.standard_normal(14)
    assert np.allclose(exchange_context([m], query), m.summary, atol=1e-12)
    twin = _message(m.summary.copy())
    assert np.allclose(exchange_context([m, twin], query), m.summary, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=INBOX_WINDOW), st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_attention_weights_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    inbox = [_message(rng.standard_normal(D_MSG) * 3) for _ in range(n)]
    weights = attention_weights(inbox, rng.standard_normal(14))
    assert weights.shape == (n,)
    assert abs(weights.sum() - 1.0) < 1e-12
    assert np.all(weights >= 0)


def test_shuffled_inbox_reorders_weights():
    rng = np.random.default_rng(11)
    inbox = [_message(rng.standard_normal(D_MSG)) for _ in range(INBOX_WINDOW)]
    query = rng.standard_normal(14)
    order = [3, 0, 4, 1, 2]
    shuffled = [inbox[i] for i in order]
    assert np.allclose(attention_weights(shuffled, query), attention_weights(inbox, query)[order], atol=1e-12)
    assert np.allclose(exchange_context(shuffled, query), exchange_context(inbox, query), atol=1e-12)


def test_inbox_over_window_raises():
    inbox = [_message(np.zeros(D_MSG)) for _ in range(INBOX_WINDOW + 1)]
    with pytest.raises(PolicyError):
        attention_weights(inbox, np.ones(14))


def test_message_validation():
    with pytest.raises(PolicyError):
        _message(np.zeros(D_MSG - 1))
    with pytest.raises(PolicyError):
        _message(np.zeros(D_MSG), sender='coordinator')
    with pytest.raises(PolicyError):
        _message(np.full(D_MSG, np.nan))


def test_observation_is_deterministic_and_flags_substitution():
    state = PortfolioState(DAY, 50_000.0, 100)
    inbox = [_message(np.linspace(-1, 1, D_MSG), sender='trading')]
    a = build_observation(state, _slice(), None, inbox)
    b = build_observation(state, _slice(), None, inbox)
    assert np.array_equal(a.vector, b.vector)
    assert a.dim == ObservationLayout().dim
    assert a.substituted


def test_observation_rejects_mismatched_dates():
    state = PortfolioState(date(2024, 2, 29), 1000.0)
    with pytest.raises(PolicyError):
        build_observation(state, _slice(), None)


def test_normalizer_frozen_against_later_mutation(synth_slices):
    train = list(synth_slices[:60])
    signals = compute_signals(train)
    normalizer = fit_normalizer(train, signals)
    mean, std = normalizer.mean.copy(), normalizer.std.copy()
    rows = np.array([[1.0, 2.0], [3.0, 4.0]])
    fitted = FeatureNormalizer.fit(rows)
    rows[:] = 99.0
    assert np.array_equal(fitted.mean, [2.0, 3.0])
    assert np.array_equal(normalizer.mean, mean) and np.array_equal(normalizer.std, std)


def test_normalizer_handles_constant_feature():
    fitted = FeatureNormalizer.fit([[1.0, 5.0], [3.0, 5.0]])
    assert fitted.std[1] == 1.0
    assert np.allclose(fitted.transform([2.0, 5.0]), [0.0, 0.0])


def test_zero_weight_policies():
    obs = build_observation(PortfolioState(DAY, 1000.0), _slice(), None)
    assert trading_policy_act(obs, _zero_policy('tanh')).a == 0.0
    assert hedging_policy_act(obs, _zero_policy('sigmoid')).alpha == 0.5


def test_evaluation_mode_is_deterministic():
    params = init_policy('AdvantageAC', ObservationLayout().dim, 'tanh', np.random.default_rng(5), SMALL)
    obs = build_observation(PortfolioState(DAY, 1000.0, 3), _slice(), None)
    assert trading_policy_act(obs, params) == trading_policy_act(obs, params)


def test_policy_contract_violations():
    obs = build_observation(PortfolioState(DAY, 1000.0), _slice(), None)
    with pytest.raises(PolicyError):
        trading_policy_act(obs, _zero_policy('sigmoid'))
    with pytest.raises(PolicyError):
        hedging_policy_act(obs, _zero_policy('sigmoid', obs_dim=10))


def test_action_types_enforce_ranges():
    with pytest.raises(PolicyError):
        TradingAction(1.5)
    with pytest.raises(PolicyError):
        HedgeRatio(-0.1)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.floats(min_value=-1e6, max_value=1e6))
def test_fuzzed_outputs_stay_in_range(seed, scale):
    rng = np.random.default_rng(seed)
    obs = build_observation(PortfolioState(DAY, 1000.0), _slice(), None)
    for squash, act in (('tanh', trading_policy_act), ('sigmoid', hedging_policy_act)):
        params = init_policy('ClippedPG', obs.dim, squash, rng, SMALL)
        params = params.with_theta(params.theta * scale)
        value = act(obs, params, rng)
        bound = value.a if squash == 'tanh' else value.alpha
        assert (-1.0 <= bound <= 1.0) if squash == 'tanh' else (0.0 <= bound <= 1.0)


def test_target_put_contracts_examples():
    assert target_put_contracts(1.0, 200, -0.5) == 4
    assert target_put_contracts(HedgeRatio(0.0), 200, -0.5) == 0
    assert target_put_contracts(1.0, 0, -0.5) == 0
    assert target_put_contracts(0.5, 100, -0.4) == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=1, max_value=100_000), st.floats(min_value=-0.99, max_value=-0.01),
       st.floats(min_value=0.0, max_value=1.0))
def test_full_hedge_neutrality(h, delta_put, alpha):
    n = target_put_contracts(1.0, h, delta_put)
    assert abs(h + n * 100 * delta_put) <= 100 * abs(delta_put) / 2 + 1e-9
    exact = target_put_contracts(1.0, h, delta_put, multiplier=1, fractional=True)
    assert abs(h + exact * delta_put) < 1e-9 * h
    assert target_put_contracts(alpha, h, delta_put) >= 0


def test_target_put_contracts_rejects_bad_inputs():
    with pytest.raises(PolicyError):
        target_put_contracts(1.0, 100, 0.3)
    with pytest.raises(PolicyError):
        target_put_contracts(1.0, -1, -0.5)


def test_emit_message_shape():
    params = init_policy('DeterministicAC', ObservationLayout().dim, 'sigmoid', np.random.default_rng(2), SMALL)
    obs = build_observation(PortfolioState(DAY, 1000.0), _slice(), None)
    message = emit_message(params, obs, 'hedging')
    assert message.summary.shape == (D_MSG,)
    assert message.date == DAY


def test_checkpoint_round_trip(tmp_path):
    normalizer = FeatureNormalizer(np.arange(6.0), np.ones(6))
    params = init_policy('DeterministicAC', 18, 'sigmoid', np.random.default_rng(9), SMALL,
                         normalizer=normalizer, seed=9, training_window=(date(2023, 1, 3), date(2023, 12, 29)),
                         include_options=False)
    json_path, bin_path = save_checkpoint(params, tmp_path / "hedger_DeterministicAC")
    assert json_path.exists() and bin_path.exists()
    loaded = load_checkpoint(json_path)
    assert isinstance(loaded, PolicyParams)
    assert np.array_equal(loaded.theta, params.theta)
    assert (loaded.kind, loaded.squash, loaded.seed) == ('DeterministicAC', 'sigmoid', 9)
    assert loaded.training_window == params.training_window
    assert np.array_equal(loaded.normalizer.mean, normalizer.mean)
    assert ObservationLayout.for_policy(loaded) == ObservationLayout(False, True)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(PolicyError):
        load_checkpoint(tmp_path / "missing.json")

    params = init_policy('ClippedPG', 10, 'tanh', np.random.default_rng(1), SMALL)
    json_path, bin_path = save_checkpoint(params, tmp_path / "trader")
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(PolicyError):
        load_checkpoint(json_path)

    json_path.write_text("{not json", encoding="utf-8")
    with pytest.raises(PolicyError):
        load_checkpoint(json_path)
