"""
Report I/O - Backtest Report Files, Comparison Tables and Plots

FILES (one directory per backtest):
- report.json      strategy, dataset label, seed, metrics, regime tables,
                   selections, config echo and run events (sorted keys)
- equity.csv       date, equity, return
- trades.csv       date, kind, quantity, price, cost, strike, expiry, multiplier
- selections.csv   cycle_start, candidate, metric, selected
- equity.svg       optional equity curve

Non-finite metrics are written as the strings "inf" / "-inf" and read back
as floats. Nothing written here depends on the wall clock, so identical
reports produce identical bytes.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from scripts.backtest.metrics import (
    BOOTSTRAP_STATISTICS,
    METRIC_COLUMNS,
    PERCENT_COLUMNS,
    bootstrap_test,
    improvement_row,
)

logger = logging.getLogger(__name__)

REPORT_FILE = 'report.json'
EQUITY_FILE = 'equity.csv'
TRADES_FILE = 'trades.csv'
SELECTIONS_FILE = 'selections.csv'
PLOT_FILE = 'equity.svg'
TRAINING_LOG_FILE = 'training_log.csv'

TRADE_COLUMNS = ['date', 'kind', 'quantity', 'price', 'cost', 'strike', 'expiry', 'multiplier']
SELECTION_COLUMNS = ['cycle_start', 'candidate', 'metric', 'selected']
TRAINING_LOG_COLUMNS = ['agent', 'step', 'episode', 'reward', 'SR']
COMPARISON_COLUMNS = ['dataset', 'strategy'] + [f"{c}(%)" if c in PERCENT_COLUMNS else c for c in METRIC_COLUMNS]
IMPROVEMENT_LABEL = 'Improvement (%)'
SVG_HASH_SALT = 'deltahedge'


class ReportError(ValueError):
    """Missing, unreadable or incomparable report."""


def _json_value(value):
    if isinstance(value, dict):
        return {str(k): _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, np.integer):
        return int(value)
    return value


def _float_value(value):
    if value in ("inf", "-inf"):
        return float(value)
    return None if value is None else float(value)


def _write_csv(frame, path):
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")
    return path


# ========================================
# Writers
# ========================================

def report_payload(report):
    return _json_value({
        'strategy': report.strategy,
        'dataset': report.label,
        'seed': report.seed,
        'start': report.dates[0] if report.dates else None,
        'end': report.dates[-1] if report.dates else None,
        'n_days': len(report.dates),
        'final_equity': report.equity[-1] if report.equity else None,
        'metrics': report.metrics.as_dict() if report.metrics is not None else None,
        'regimes': {label: table.as_dict() for label, table in report.regimes.items()},
        'selections': [
            {'cycle_start': row.cycle_start, 'candidate': row.candidate, 'metric': row.metric,
             'selected': row.selected}
            for row in report.selections
        ],
        'n_trades': len(report.trades),
        'config': report.config,
        'events': report.events,
    })


def equity_frame(report):
    returns = [None] + list(report.returns)
    return pd.DataFrame({
        'date': [d.isoformat() for d in report.dates],
        'equity': report.equity,
        'return': returns[:len(report.dates)],
    })


def trades_frame(trades):
    return pd.DataFrame(
        [[t.date.isoformat(), t.kind, t.quantity, t.price, t.cost, t.strike,
          t.expiry.isoformat() if t.expiry else None, t.multiplier] for t in trades],
        columns=TRADE_COLUMNS,
    )


def selections_frame(rows):
    return pd.DataFrame(
        [[r.cycle_start.isoformat(), r.candidate, r.metric, r.selected] for r in rows],
        columns=SELECTION_COLUMNS,
    )


def write_report(report, out_dir, plot=False):
    """Write the report directory; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report_payload(report)
    report_path = out_dir / REPORT_FILE
    report_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    paths = [
        report_path,
        _write_csv(equity_frame(report), out_dir / EQUITY_FILE),
        _write_csv(trades_frame(report.trades), out_dir / TRADES_FILE),
        _write_csv(selections_frame(report.selections), out_dir / SELECTIONS_FILE),
    ]
    if plot:
        paths.append(plot_equity({report.strategy: (report.dates, report.equity)}, out_dir / PLOT_FILE,
                                 title=f"{report.label}: {report.strategy}"))
    logger.info(f"Report for {report.strategy} written to {out_dir}")
    return paths


def write_training_log(logs, path):
    """logs: agent name -> list of TrainingLogRow."""
    rows = [[agent, row.step, row.episode, row.reward, row.sr]
            for agent in sorted(logs) for row in logs[agent]]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return _write_csv(pd.DataFrame(rows, columns=TRAINING_LOG_COLUMNS), path)


def plot_equity(curves, path, title=None):
    """SVG line chart of one or more equity curves (name -> (dates, values))."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT, 'svg.fonttype': 'none'}):
        fig, ax = plt.subplots(figsize=(10, 5))
        for name in sorted(curves):
            dates, values = curves[name]
            ax.plot(pd.to_datetime(list(dates)), values, label=name, linewidth=1.2)
        ax.set_xlabel('Date')
        ax.set_ylabel('Portfolio value')
        if title:
            ax.set_title(title)
        ax.legend(loc='best')
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return Path(path)


# ========================================
# Readers
# ========================================

@dataclass(eq=False)
class LoadedReport:
    path: Path
    strategy: str
    dataset: str
    seed: int
    dates: List[date]
    equity: np.ndarray
    returns: np.ndarray
    metrics: Optional[Dict[str, float]]
    regimes: Dict[str, Dict[str, float]] = field(default_factory=dict)
    payload: dict = field(default_factory=dict)


def _metric_dict(raw):
    if raw is None:
        return None
    return {k: (_float_value(v) if k in METRIC_COLUMNS or k == 'annual_return' else v) for k, v in raw.items()}


def read_report(report_dir):
    report_dir = Path(report_dir)
    report_path = report_dir / REPORT_FILE
    equity_path = report_dir / EQUITY_FILE
    for path in (report_path, equity_path):
        if not path.exists():
            raise ReportError(f"{report_dir}: missing {path.name}")
    try:
        payload = json.loads(report_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ReportError(f"{report_path}: unreadable report ({e})")
    curve = pd.read_csv(equity_path)
    if list(curve.columns) != ['date', 'equity', 'return']:
        raise ReportError(f"{equity_path}: unexpected columns {list(curve.columns)}")
    return LoadedReport(
        path=report_dir,
        strategy=payload['strategy'],
        dataset=payload.get('dataset', 'unlabelled'),
        seed=payload.get('seed', 0),
        dates=[date.fromisoformat(d) for d in curve['date']],
        equity=curve['equity'].to_numpy(dtype=np.float64),
        returns=curve['return'].dropna().to_numpy(dtype=np.float64),
        metrics=_metric_dict(payload.get('metrics')),
        regimes={k: _metric_dict(v) for k, v in (payload.get('regimes') or {}).items()},
        payload=payload,
    )


# ========================================
# Comparison
# ========================================

@dataclass(eq=False)
class DatasetComparison:
    dataset: str
    reference: Optional[str]
    rows: Dict[str, Dict[str, float]]
    improvement: Optional[Dict[str, float]]
    p_values: Dict[str, Dict[str, float]]
    regimes: Dict[str, Dict[str, Dict[str, float]]]


def _display(metrics):
    return {c: (metrics[c] * 100.0 if c in PERCENT_COLUMNS else metrics[c]) for c in METRIC_COLUMNS}


def compare_reports(reports, reference='deltahedge', n_resamples=10_000, block_length=None, seed=0):
    """
    Group reports by dataset label; within a group every report must cover
    the same dates. Returns one DatasetComparison per label (sorted).
    """
    if len(reports) < 2:
        raise ReportError(f"compare needs at least 2 reports, got {len(reports)}")
    groups = {}
    for report in reports:
        groups.setdefault(report.dataset, []).append(report)

    out = []
    for dataset in sorted(groups):
        members = groups[dataset]
        first = members[0]
        for other in members[1:]:
            if other.dates != first.dates:
                raise ReportError(
                    f"dataset '{dataset}': {other.strategy} covers {other.dates[0]} .. {other.dates[-1]} "
                    f"({len(other.dates)} days), {first.strategy} covers {first.dates[0]} .. {first.dates[-1]} "
                    f"({len(first.dates)} days)"
                )
        names = [m.strategy for m in members]
        if len(set(names)) != len(names):
            raise ReportError(f"dataset '{dataset}': duplicate strategy reports {names}")
        missing = [m.strategy for m in members if m.metrics is None]
        if missing:
            raise ReportError(f"dataset '{dataset}': no metrics for {missing}")

        rows = {m.strategy: _display(m.metrics) for m in members}
        ref = next((m for m in members if m.strategy == reference), None)
        improvement, p_values = None, {}
        if ref is None:
            logger.warning(f"Reference strategy '{reference}' not in dataset '{dataset}'; "
                           f"skipping p-values and improvement row")
        else:
            others = [rows[m.strategy] for m in members if m is not ref]
            improvement = improvement_row(rows[ref.strategy], others)
            for m in members:
                if m is ref:
                    continue
                p_values[m.strategy] = {
                    stat: bootstrap_test(ref.returns, m.returns, stat, n_resamples, block_length, seed)
                    for stat in BOOTSTRAP_STATISTICS
                }

        regimes = {}
        for m in members:
            for label, table in m.regimes.items():
                regimes.setdefault(label, {})[m.strategy] = _display(table)
        out.append(DatasetComparison(dataset, ref.strategy if ref else None, rows, improvement, p_values, regimes))
    return out


def comparison_frame(comparisons):
    """Results-table layout: one row per (dataset, strategy) plus each improvement row."""
    records = []
    for comp in comparisons:
        for strategy, row in comp.rows.items():
            records.append([comp.dataset, strategy] + [row[c] for c in METRIC_COLUMNS])
        if comp.improvement is not None:
            records.append([comp.dataset, IMPROVEMENT_LABEL] + [comp.improvement[c] for c in METRIC_COLUMNS])
    return pd.DataFrame(records, columns=COMPARISON_COLUMNS)


def regime_frame(comparisons):
    records = []
    for comp in comparisons:
        for label in sorted(comp.regimes):
            for strategy, row in comp.regimes[label].items():
                records.append([comp.dataset, label, strategy] + [row[c] for c in METRIC_COLUMNS])
    return pd.DataFrame(records, columns=['dataset', 'regime', 'strategy'] + COMPARISON_COLUMNS[2:])


def p_value_frame(comparisons):
    records = [[comp.dataset, comp.reference, strategy] + [pv[s] for s in BOOTSTRAP_STATISTICS]
               for comp in comparisons for strategy, pv in comp.p_values.items()]
    return pd.DataFrame(records, columns=['dataset', 'reference', 'strategy'] + [f"p_{s}" for s in BOOTSTRAP_STATISTICS])


def write_comparison(comparisons, out_dir, reports=None, plot=False):
    """comparison.csv, regimes.csv, p_values.csv and comparison.json (plus one SVG per dataset)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        _write_csv(comparison_frame(comparisons), out_dir / 'comparison.csv'),
        _write_csv(regime_frame(comparisons), out_dir / 'regimes.csv'),
        _write_csv(p_value_frame(comparisons), out_dir / 'p_values.csv'),
    ]
    payload = _json_value({
        comp.dataset: {'reference': comp.reference, 'table': comp.rows, 'improvement': comp.improvement,
                       'p_values': comp.p_values, 'regimes': comp.regimes}
        for comp in comparisons
    })
    json_path = out_dir / 'comparison.json'
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    paths.append(json_path)
    if plot and reports:
        for comp in comparisons:
            curves = {r.strategy: (r.dates, r.equity) for r in reports if r.dataset == comp.dataset}
            paths.append(plot_equity(curves, out_dir / f"equity_{comp.dataset}.svg", title=comp.dataset))
    return paths
