"""
Ensemble - Quarterly Retrain, Validate, Select, Deploy

At every cycle boundary d (trading-day index into the calendar):

    train    [d - V - L, d - V)     L = 90 lookback days
    validate [d - V, d)             V = 30 validation days
    deploy   [d, d + 63)            until the next boundary

Each hedging learner kind is trained on the same lookback slice with its own
seed, then scored on the validation slice by M = mean(r) / std(r). The
argmax is deployed; exact ties go to the earlier learner kind in
ClippedPG < AdvantageAC < DeterministicAC order.

Training and validation are injected as callables so this module only owns
the windowing and selection rules:

    train_fn(kind, seed, (start, end))     -> PolicyParams
    validate_fn(policy, (start, end))      -> daily returns
"""
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Optional

import numpy as np

from scripts.backtest.rl_core import DEGENERATE_STD, LEARNER_KINDS

logger = logging.getLogger(__name__)

CYCLE_DAYS = 63
LOOKBACK_DAYS = 90
VALIDATION_DAYS = 30


@dataclass(frozen=True)
class RetrainSchedule:
    cycle_days: int = CYCLE_DAYS
    lookback_days: int = LOOKBACK_DAYS
    validation_days: int = VALIDATION_DAYS

    def __post_init__(self):
        if self.cycle_days < 1 or self.lookback_days < 2 or self.validation_days < 2:
            raise ValueError(f"invalid retrain schedule {self}")

    @property
    def required_history(self):
        return self.lookback_days + self.validation_days

    def windows(self, boundary):
        """(train range, validation range) as half-open index pairs ending before `boundary`."""
        validation_start = boundary - self.validation_days
        train = (validation_start - self.lookback_days, validation_start)
        validation = (validation_start, boundary)
        return train, validation


@dataclass(eq=False)
class CandidateResult:
    kind: str
    seed: int
    policy: object
    validation_returns: np.ndarray
    metric: Optional[float]


@dataclass(frozen=True)
class SelectionRow:
    cycle_start: date
    candidate: str
    metric: Optional[float]
    selected: bool


@dataclass(eq=False)
class CycleResult:
    boundary: int
    cycle_start: date
    candidates: list = field(default_factory=list)
    selected: Optional[int] = None
    active: object = None
    retained: bool = False

    def selection_rows(self):
        if self.retained or self.selected is None:
            kind = getattr(self.active, 'kind', 'none')
            return [SelectionRow(self.cycle_start, kind, None, True)]
        return [SelectionRow(self.cycle_start, c.kind, c.metric, i == self.selected)
                for i, c in enumerate(self.candidates)]


def validation_metric(returns):
    """M = mean / std (ddof=1); None when fewer than 2 returns or std < 1e-12."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        return None
    std = float(np.std(r, ddof=1))
    if std < DEGENERATE_STD:
        return None
    return float(np.mean(r) / std)


def candidate_seed(seed, cycle, kind):
    """Independent, order-free seed per (run seed, cycle, learner kind)."""
    entropy = [int(seed) & 0xFFFFFFFF, int(cycle), LEARNER_KINDS.index(kind)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _emit(events, kind, /, **details):
    if events is not None:
        events.log_event(kind, **details)


def select_active(results, events=None, cycle_start=None):
    """
    Index of the argmax-M result; exact ties resolve by learner-kind order.
    None when no result has a defined metric.
    """
    defined = [(i, r) for i, r in enumerate(results) if r.metric is not None]
    if not defined:
        return None
    best = max(r.metric for _, r in defined)
    tied = [(i, r) for i, r in defined if r.metric == best]
    tied.sort(key=lambda item: LEARNER_KINDS.index(item[1].kind))
    if len(tied) > 1:
        kinds = [r.kind for _, r in tied]
        logger.warning(f"Selection tie at M={best:.6g} between {kinds}; taking {kinds[0]}")
        _emit(events, 'selection_tie', date=cycle_start, metric=best, candidates=kinds, chosen=kinds[0])
    return tied[0][0]


def run_cycle(dates, boundary, schedule, kinds, seed, train_fn, validate_fn, previous=None, cycle=0,
              events=None):
    """
    Train every kind on the lookback, score on the validation window and
    pick the active hedger for the cycle starting at dates[boundary].
    Insufficient history or no defined metric retains `previous`.

    Args:
        dates: trading calendar
        boundary: index of the first day of the new cycle
        schedule: RetrainSchedule giving the lookback and validation windows
        kinds: learner kinds to train, in selection tie-break order
        seed: run seed; each candidate gets candidate_seed(seed, cycle, kind)
        train_fn: (kind, seed, (start, end)) -> policy
        validate_fn: (policy, (start, end)) -> daily returns
        previous: policy kept when no candidate can be selected

    Returns:
        CycleResult. Both windows end at or before `boundary`.
    """
    cycle_start = dates[boundary]
    if boundary < schedule.required_history:
        logger.warning(f"Cycle {cycle} at {cycle_start}: {boundary} days of history < "
                       f"{schedule.required_history} required; retaining previous policy")
        _emit(events, 'policy_retained', date=cycle_start, reason='insufficient_history',
              history=boundary, required=schedule.required_history)
        return CycleResult(boundary, cycle_start, active=previous, retained=True)

    train_range, validation_range = schedule.windows(boundary)
    assert validation_range[1] <= boundary and train_range[1] <= validation_range[0]

    results = []
    for kind in kinds:
        s = candidate_seed(seed, cycle, kind)
        policy = train_fn(kind, s, train_range)
        returns = np.asarray(validate_fn(policy, validation_range), dtype=np.float64)
        results.append(CandidateResult(kind, s, policy, returns, validation_metric(returns)))

    selected = select_active(results, events, cycle_start)
    if selected is None:
        logger.warning(f"Cycle {cycle} at {cycle_start}: every validation metric undefined; retaining previous policy")
        _emit(events, 'policy_retained', date=cycle_start, reason='undefined_metric')
        return CycleResult(boundary, cycle_start, results, None, previous, retained=True)

    chosen = results[selected]
    metrics = ', '.join(f"{r.kind}={'n/a' if r.metric is None else f'{r.metric:.4f}'}" for r in results)
    logger.info(f"Cycle {cycle} at {cycle_start}: {metrics} -> {chosen.kind}")
    _emit(events, 'policy_selected', date=cycle_start, kind=chosen.kind, metric=chosen.metric)
    return CycleResult(boundary, cycle_start, results, selected, chosen.policy)


def deployment_loop(dates, test_range, schedule, cycle_fn, initial=None):
    """
    Walk the test range [start, end) in cycle_days steps.

    cycle_fn(boundary, cycle, previous) -> CycleResult. Returns the
    date -> active policy map and the cycle results; each date maps to the
    policy chosen at its most recent boundary.
    """
    start, end = test_range
    if end <= start:
        raise ValueError(f"empty test range {test_range}")
    active_by_date = {}
    cycles = []
    previous = initial
    for cycle, boundary in enumerate(range(start, end, schedule.cycle_days)):
        result = cycle_fn(boundary, cycle, previous)
        cycles.append(result)
        previous = result.active
        for i in range(boundary, min(boundary + schedule.cycle_days, end)):
            active_by_date[dates[i]] = previous
    return active_by_date, cycles
