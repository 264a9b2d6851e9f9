"""
Run Logger for the Backtesting Desk

Structured record of one command run: start, the events worth auditing
(neutral signal substitution, retained policies, selection ties, aborted
days) and the final status. Events are echoed to `logging` and embedded in
report.json under "events".

No wall-clock values are recorded, so identical runs produce identical
event logs.
"""
import logging
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

EVENT_LEVELS = {
    'neutral_signals': logging.WARNING,
    'policy_retained': logging.WARNING,
    'selection_tie': logging.WARNING,
    'day_aborted': logging.ERROR,
}


def _plain(value):
    if hasattr(value, 'isoformat'):
        return value.isoformat()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float):
        return value
    if hasattr(value, 'item'):
        return value.item()
    return value


class RunLogger:
    """
    Tracks one run by command and strategy.

    Usage:
        with RunLogger('backtest', strategy='deltahedge', seed=7) as run:
            run.log_event('policy_retained', date=d, reason='insufficient_history')
    """

    def __init__(self, command: str, **metadata):
        self.command = command
        self.metadata = {k: _plain(v) for k, v in metadata.items()}
        self.events: List[Dict[str, Any]] = []
        self.status: Optional[str] = None
        self.error_message: Optional[str] = None
        self.run_id: Optional[str] = None

    def start_run(self) -> str:
        parts = [self.command] + [f"{k}={v}" for k, v in sorted(self.metadata.items())]
        self.run_id = ":".join(str(p) for p in parts)
        self.status = 'running'
        logger.info(f"Started {self.command} run: {self.run_id}")
        return self.run_id

    def log_event(self, kind: str, /, **details):
        """Record an event; `details` values must be JSON-representable after date/array conversion."""
        event = {'event': kind, 'seq': len(self.events)}
        event.update({k: _plain(v) for k, v in details.items()})
        self.events.append(event)
        summary = ", ".join(f"{k}={v}" for k, v in event.items() if k not in ('event', 'seq'))
        logger.log(EVENT_LEVELS.get(kind, logging.INFO), f"[{kind}] {summary}")
        return event

    def end_run(self, status: str, error_message: Optional[str] = None):
        self.status = status
        self.error_message = error_message
        if status == 'success':
            logger.info(f"Completed {self.command} run {self.run_id}: {len(self.events)} event(s)")
        else:
            logger.error(f"{self.command} run {self.run_id} ended with status {status}: {error_message}")

    def events_of(self, kind: str):
        return [e for e in self.events if e['event'] == kind]

    def to_dict(self):
        return {
            'run_id': self.run_id,
            'command': self.command,
            'metadata': self.metadata,
            'status': self.status,
            'error_message': self.error_message,
            'events': list(self.events),
        }

    def __enter__(self):
        self.start_run()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is not None:
            self.end_run('failed', str(exc_val))
        elif self.status == 'running':
            self.end_run('success')
        return False
