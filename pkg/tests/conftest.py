"""Shared fixtures: a small seeded synthetic market and fast run settings."""
import pytest

from scripts.backtest.market_data import align_dataset, synth_generate, write_dataset
from scripts.backtest.run_config import RunConfig

SYNTH_SEED = 7
SYNTH_DAYS = 160

FAST_RL = {
    'timesteps': 64,
    'retrain_timesteps': 32,
    'joint_rounds': 1,
    'train_days': 60,
    'rollout_steps': 32,
    'batch_size': 16,
    'n_epochs': 1,
    'learning_starts': 8,
    'replay_size': 256,
    'hidden': (8,),
}
FAST_ENSEMBLE = {'cycle_days': 40, 'lookback_days': 30, 'validation_days': 10}


@pytest.fixture(scope="session")
def synth_dataset():
    return synth_generate(SYNTH_SEED, SYNTH_DAYS)


@pytest.fixture(scope="session")
def synth_slices(synth_dataset):
    return align_dataset(synth_dataset)


@pytest.fixture
def data_dir(tmp_path, synth_dataset):
    directory = tmp_path / "data"
    write_dataset(synth_dataset, directory)
    return directory


@pytest.fixture
def fast_config(data_dir):
    """Defaults shrunk so a full deltahedge backtest runs in seconds."""
    return RunConfig().with_overrides(
        data={'dir': str(data_dir)},
        rl=dict(FAST_RL),
        ensemble=dict(FAST_ENSEMBLE),
        signals={'forecast_window': 20, 'forecast_horizon': 5},
        metrics={'bootstrap_resamples': 1000},
    )
