"""
Run Configuration - INI File to Validated RunConfig

Sections: [data] [costs] [signals] [rl] [ensemble] [run] [metrics].
Every key has a default (documented in config/deltahedge.ini); unknown
sections or keys are rejected. Environment variables are never read.
"""
import configparser
import logging
from datetime import date
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from scripts.backtest.baselines import parse_strategy
from scripts.backtest.metrics import REGIME_PRESETS
from scripts.backtest.portfolio import OPTION_FIXED_PER_CONTRACT, OPTION_FIXED_RAW, CostModel
from scripts.backtest.rl_core import LEARNER_KINDS, MAX_HIDDEN_LAYERS, MAX_HIDDEN_UNITS, LearnerConfig
from scripts.backtest.signals import SignalConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Unreadable, invalid or unknown configuration."""


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(',') if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    dir: str = "data"
    label: str = "synthetic"
    bars: str = "bars.csv"
    options: str = "options.csv"
    sentiment: str = "sentiment.csv"
    vix: str = "vix.csv"
    require_sentiment: bool = False
    require_vix: bool = False
    pricing_rate: float = 0.02


class CostsSection(_Section):
    equity_rate: float = Field(0.002, ge=0)
    option_fixed_per_contract: float = Field(OPTION_FIXED_PER_CONTRACT, ge=0)
    # 'contract' = $0.70 per contract, 'raw' = the literal 0.007
    option_fixed_mode: str = "contract"
    option_prop_rate: float = Field(0.005, ge=0)
    multiplier: int = Field(100, ge=1)

    @field_validator('option_fixed_mode')
    @classmethod
    def _mode(cls, value):
        if value not in ('contract', 'raw'):
            raise ValueError("option_fixed_mode must be 'contract' or 'raw'")
        return value

    def cost_model(self):
        fixed = OPTION_FIXED_RAW if self.option_fixed_mode == 'raw' else self.option_fixed_per_contract
        return CostModel(self.equity_rate, fixed, self.option_prop_rate)


class SignalsSection(_Section):
    w_f: float = 0.5
    w_s: float = 0.5
    tanh_scale: float = Field(0.05, gt=0)
    use_vix: bool = False
    w_v: float = 0.25
    forecast_window: int = Field(60, ge=2)
    forecast_horizon: int = Field(30, ge=1)

    def signal_config(self):
        return SignalConfig(self.w_f, self.w_s, self.tanh_scale, self.use_vix, self.w_v)


class RLSection(_Section):
    timesteps: int = Field(20_000, ge=0)
    retrain_timesteps: int = Field(2_000, ge=0)
    joint_rounds: int = Field(2, ge=1)
    train_days: int = Field(252, ge=2)
    trading_kind: str = "ClippedPG"
    sharpe_window: int = Field(60, ge=2)
    gamma: float = Field(0.99, ge=0, le=1)
    clip_range: float = Field(0.2, gt=0)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    learning_rate: float = Field(3e-4, gt=0)
    n_steps: int = Field(5, ge=1)
    rollout_steps: int = Field(256, ge=1)
    n_epochs: int = Field(4, ge=1)
    batch_size: int = Field(64, ge=1)
    replay_size: int = Field(10_000, ge=1)
    tau: float = Field(0.005, gt=0, le=1)
    exploration_noise: float = Field(0.1, ge=0)
    learning_starts: int = Field(100, ge=0)
    hidden: Tuple[int, ...] = (64, 64)
    checkpoints: Optional[str] = None

    @field_validator('hidden', mode='before')
    @classmethod
    def _hidden(cls, value):
        hidden = tuple(int(v) for v in _split_list(value))
        if len(hidden) > MAX_HIDDEN_LAYERS or any(not 1 <= n <= MAX_HIDDEN_UNITS for n in hidden):
            raise ValueError(f"hidden must be at most {MAX_HIDDEN_LAYERS} layers of 1..{MAX_HIDDEN_UNITS} units")
        return hidden

    @field_validator('trading_kind')
    @classmethod
    def _kind(cls, value):
        if value not in LEARNER_KINDS:
            raise ValueError(f"trading_kind must be one of {LEARNER_KINDS}")
        return value

    def learner_config(self):
        return LearnerConfig(
            gamma=self.gamma, clip_range=self.clip_range, gae_lambda=self.gae_lambda,
            learning_rate=self.learning_rate, n_steps=self.n_steps, rollout_steps=self.rollout_steps,
            n_epochs=self.n_epochs, batch_size=self.batch_size, replay_size=self.replay_size,
            tau=self.tau, exploration_noise=self.exploration_noise,
            learning_starts=self.learning_starts, hidden=self.hidden,
        )


class EnsembleSection(_Section):
    cycle_days: int = Field(63, ge=1)
    lookback_days: int = Field(90, ge=2)
    validation_days: int = Field(30, ge=2)
    kinds: List[str] = list(LEARNER_KINDS)
    validation_costs: bool = True
    target_dte: int = Field(30, ge=1)

    @field_validator('kinds', mode='before')
    @classmethod
    def _kinds(cls, value):
        kinds = _split_list(value)
        unknown = [k for k in kinds if k not in LEARNER_KINDS]
        if unknown or not kinds:
            raise ValueError(f"kinds must be a non-empty subset of {LEARNER_KINDS}, got {kinds}")
        return kinds


class RunSection(_Section):
    strategy: str = "deltahedge"
    seed: int = 0
    initial_cash: float = Field(100_000.0, gt=0)
    start: Optional[date] = None
    end: Optional[date] = None
    plot: bool = False

    @field_validator('strategy')
    @classmethod
    def _strategy(cls, value):
        parse_strategy(value)
        return value

    @model_validator(mode='after')
    def _range(self):
        if self.start and self.end and self.end < self.start:
            raise ValueError(f"run.end {self.end} precedes run.start {self.start}")
        return self


class MetricsSection(_Section):
    periods: int = Field(252, ge=1)
    rf_annual: float = 0.0
    bootstrap_resamples: int = Field(10_000, ge=1000)
    block_length: Optional[int] = Field(None, ge=1)
    regimes: List[str] = [w.label for w in REGIME_PRESETS]
    reference: str = "deltahedge"

    @field_validator('regimes', mode='before')
    @classmethod
    def _regimes(cls, value):
        names = _split_list(value)
        known = {w.label for w in REGIME_PRESETS}
        unknown = [n for n in names if n not in known]
        if unknown:
            raise ValueError(f"unknown regime preset(s) {unknown}; known: {sorted(known)}")
        return names

    def regime_windows(self):
        return [w for w in REGIME_PRESETS if w.label in self.regimes]


class RunConfig(_Section):
    data: DataSection = DataSection()
    costs: CostsSection = CostsSection()
    signals: SignalsSection = SignalsSection()
    rl: RLSection = RLSection()
    ensemble: EnsembleSection = EnsembleSection()
    run: RunSection = RunSection()
    metrics: MetricsSection = MetricsSection()

    def echo(self):
        return self.model_dump(mode='json')

    def with_overrides(self, **sections):
        """Copy with per-section key overrides, e.g. with_overrides(run={'seed': 3})."""
        payload = self.model_dump()
        for section, values in sections.items():
            payload.setdefault(section, {}).update(values)
        return _validate(payload, "<overrides>")


def _validate(payload, source):
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{source}: {problems}")


def load_config(path=None, seed=None):
    """
    Read an INI file into a RunConfig. No path means all defaults.
    --seed overrides run.seed.
    """
    payload = {}
    source = "<defaults>"
    if path is not None:
        path = Path(path)
        source = str(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}")
        payload = {section: dict(parser.items(section)) for section in parser.sections()}
    if seed is not None:
        payload.setdefault('run', {})['seed'] = seed
    config = _validate(payload, source)
    logger.info(f"Loaded configuration from {source} (strategy={config.run.strategy}, seed={config.run.seed})")
    return config
