"""Tests for INI loading and validation."""
from datetime import date
from pathlib import Path

import pytest

from scripts.backtest.portfolio import OPTION_FIXED_RAW
from scripts.backtest.run_config import ConfigError, RunConfig, load_config

SHIPPED_CONFIG = Path(__file__).resolve().parents[1] / "config" / "deltahedge.ini"


def _write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_shipped_config_matches_defaults():
    assert load_config(SHIPPED_CONFIG) == RunConfig()
    assert load_config() == RunConfig()


def test_values_are_parsed(tmp_path):
    path = _write(tmp_path, """
[rl]
hidden = 32
timesteps = 500

[ensemble]
kinds = AdvantageAC, ClippedPG

[run]
strategy = single_hedger:AdvantageAC
start = 2021-01-04
plot = true

[costs]
option_fixed_mode = raw
""")
    config = load_config(path)
    assert config.rl.hidden == (32,)
    assert config.rl.timesteps == 500
    assert config.ensemble.kinds == ['AdvantageAC', 'ClippedPG']
    assert config.run.start == date(2021, 1, 4)
    assert config.run.plot is True
    assert config.costs.cost_model().option_fixed_per_contract == OPTION_FIXED_RAW


def test_seed_override(tmp_path):
    path = _write(tmp_path, "[run]\nseed = 4\n")
    assert load_config(path).run.seed == 4
    assert load_config(path, seed=9).run.seed == 9


@pytest.mark.parametrize("text", [
    "[bogus]\nkey = 1\n",
    "[run]\ncolour = blue\n",
    "[run]\nstrategy = momentum\n",
    "[rl]\nhidden = 64,64,64\n",
    "[rl]\nhidden = 128\n",
    "[ensemble]\nkinds = PPO\n",
    "[metrics]\nbootstrap_resamples = 500\n",
    "[metrics]\nregimes = Sideways\n",
    "[run]\nstart = 2022-01-01\nend = 2021-01-01\n",
    "[costs]\noption_fixed_mode = flat\n",
    "no section header\n",
])
def test_invalid_configs_raise(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_overrides_and_echo():
    config = RunConfig().with_overrides(run={'seed': 3}, rl={'hidden': '16'})
    assert config.run.seed == 3 and config.rl.hidden == (16,)
    echo = config.echo()
    assert echo['run']['seed'] == 3
    assert RunConfig.model_validate(echo) == config
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(run={'initial_cash': 0})
