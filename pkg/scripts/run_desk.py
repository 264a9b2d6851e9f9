#!/usr/bin/env python3
"""
DeltaHedge Desk - Command Line Orchestrator

COMMANDS:
synth     - Seeded synthetic dataset (bars, put chain, sentiment, VIX CSVs)
train     - Joint trader/hedger training; writes checkpoints + training log
backtest  - Full backtest for run.strategy; writes the report directory
compare   - Results table, regime tables and bootstrap p-values across reports
report    - Print (and optionally plot) an existing report directory

GLOBAL FLAGS:
--config PATH   INI run configuration (defaults apply when omitted)
--seed N        overrides run.seed
--out DIR       output directory

EXIT CODES:
0 success | 1 usage/config error | 2 data error | 3 runtime error
"""
import argparse
import logging
import sys
import traceback
from pathlib import Path

# Allow `python scripts/run_desk.py` from the repository root
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from scripts.backtest.agents import PolicyError, save_checkpoint  # noqa: E402
from scripts.backtest.baselines import parse_strategy  # noqa: E402
from scripts.backtest.coordinator import (  # noqa: E402
    DeskSettings,
    checkpoint_name,
    prepare_market,
    resolve_test_range,
    run_backtest,
    train_desk_policies,
)
from scripts.backtest.market_data import DataValidationError, DriftShock, synth_generate, write_dataset  # noqa: E402
from scripts.backtest.metrics import METRIC_COLUMNS, PERCENT_COLUMNS, MetricsError  # noqa: E402
from scripts.backtest.report_io import (  # noqa: E402
    PLOT_FILE,
    TRAINING_LOG_FILE,
    ReportError,
    compare_reports,
    comparison_frame,
    p_value_frame,
    plot_equity,
    read_report,
    write_comparison,
    write_report,
    write_training_log,
)
from scripts.backtest.run_config import ConfigError, load_config  # noqa: E402
from scripts.backtest.run_log import RunLogger  # noqa: E402
from scripts.utils.validate_report import validate_report  # noqa: E402

logger = logging.getLogger('run_desk')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DEFAULT_SYNTH_DAYS = 1260
DEFAULT_OUT = 'output'


# style -> (ANSI colour, icon)
CONSOLE_STYLES = {
    'ok': ('\033[0;32m', '✅'),
    'warn': ('\033[1;33m', '⚠️ '),
    'fail': ('\033[0;31m', '❌'),
    'run': ('\033[1;33m', '▶'),
    'heading': ('\033[0;34m', ''),
}
RESET = '\033[0m'
BANNER_WIDTH = 70


def _paint(text, style, stream):
    """Plain text unless the stream is a terminal."""
    if not getattr(stream, 'isatty', lambda: False)():
        return text
    return f"{CONSOLE_STYLES[style][0]}{text}{RESET}"


def say(style, message, indent=0, stream=None):
    """One status line: `say('ok', 'Report written')` prints '✅ Report written'."""
    stream = stream or sys.stdout
    icon = CONSOLE_STYLES[style][1]
    line = f"{icon} {message}" if icon else message
    print(" " * indent + _paint(line, style, stream), file=stream)


def command_banner(command, detail):
    stream = sys.stdout
    rule = _paint('=' * BANNER_WIDTH, 'heading', stream)
    print(rule, file=stream)
    print(_paint(f"[{command}] {detail}", 'heading', stream), file=stream)
    print(rule, file=stream)


def _format_metric(column, value):
    if value is None:
        return 'n/a'
    if value in (float('inf'), float('-inf')):
        return 'inf' if value > 0 else '-inf'
    return f"{value:.2f}"


def print_metric_table(rows):
    """rows: name -> display-row dict (percent columns already scaled)."""
    header = [f"{c}(%)" if c in PERCENT_COLUMNS else c for c in METRIC_COLUMNS]
    print(f"  {'Strategy':<32}" + "".join(f"{h:>10}" for h in header))
    for name, row in rows.items():
        cells = "".join(f"{_format_metric(c, row.get(c)):>10}" for c in METRIC_COLUMNS)
        print(f"  {name:<32}{cells}")


def parse_shock(text):
    """START_DAY:DAYS:MU:SIGMA, e.g. 800:40:-1.5:0.6 for an embedded crash."""
    try:
        start_day, days, mu, sigma = text.split(':')
        return DriftShock(int(start_day), int(days), float(mu), float(sigma))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shock must be START_DAY:DAYS:MU:SIGMA, got '{text}'")


# ========================================
# Commands
# ========================================

def cmd_synth(args):
    command_banner('synth', f"{args.days} trading days into {args.out}")
    seed = args.seed if args.seed is not None else 0
    dataset = synth_generate(seed, args.days, s0=args.s0, mu=args.mu, sigma=args.sigma, r=args.rate,
                             shocks=tuple(args.shock or ()))
    paths = write_dataset(dataset, args.out)
    for name, path in paths.items():
        print(f"  {name:<10} → {path}")
    say('ok', f"{len(dataset.bars)} trading days, {len(dataset.options)} put quotes (seed={seed})")
    return EXIT_OK


def cmd_train(args):
    config = load_config(args.config, args.seed)
    spec = parse_strategy(config.run.strategy)
    if not spec.uses_rl_trader:
        raise ConfigError(f"strategy '{spec.name}' has no learned policies to train")
    command_banner('train', f"{spec.name} policies (seed={config.run.seed})")

    slices, signals = prepare_market(config)
    start, _ = resolve_test_range(config, slices)
    train_range = (max(0, start - config.rl.train_days), start)
    print(f"  Training window: {slices[train_range[0]].date} .. {slices[train_range[1] - 1].date} "
          f"({train_range[1] - train_range[0]} days), {config.rl.joint_rounds} joint round(s), "
          f"{config.rl.timesteps} steps per phase")

    with RunLogger('train', strategy=spec.name, seed=config.run.seed):
        policies = train_desk_policies(config, slices, signals, spec, DeskSettings.from_config(config),
                                       train_range, config.run.seed, candidates=spec.retrains_hedger)

    out_dir = Path(args.out)
    written = [save_checkpoint(policies.trader, (out_dir / checkpoint_name('trading')).with_suffix(''))]
    for kind, params in policies.candidates.items():
        written.append(save_checkpoint(params, (out_dir / checkpoint_name('hedging', kind)).with_suffix('')))
    log_path = write_training_log(policies.training_logs, out_dir / TRAINING_LOG_FILE)

    for json_path, _ in written:
        say('ok', json_path, indent=2)
    print(f"  Training log → {log_path}")
    say('ok', f"{len(written)} checkpoint pair(s) written to {out_dir}")
    return EXIT_OK


def cmd_backtest(args):
    config = load_config(args.config, args.seed)
    command_banner('backtest', f"{config.run.strategy} on {config.data.label} (seed={config.run.seed})")
    with RunLogger('backtest', strategy=config.run.strategy, seed=config.run.seed) as run:
        report = run_backtest(config, events=run)
        write_report(report, args.out, plot=config.run.plot or args.plot)

    print(f"  Days: {len(report.dates)} ({report.dates[0]} .. {report.dates[-1]})")
    print(f"  Final value: {report.equity[-1]:,.2f}  Trades: {len(report.trades)}  "
          f"Cycles: {len({row.cycle_start for row in report.selections})}")
    if report.metrics is not None:
        print_metric_table({report.strategy: report.metrics.display_row()})
    else:
        say('warn', "Fewer than 2 days in the test period; metrics not computed")
    say('ok', f"Report written to {args.out}")
    return EXIT_OK


def _collect_report_dirs(args, config):
    """Report dirs as given; .ini files and --strategies are backtested first into --out/<name>."""
    dirs = []
    for item in args.inputs:
        path = Path(item)
        if path.is_dir():
            dirs.append(path)
        elif path.suffix == '.ini':
            member = load_config(path, args.seed)
            dirs.append(_backtest_member(member, Path(args.out) / f"{member.data.label}_{_safe(member.run.strategy)}"))
        else:
            raise FileNotFoundError(f"not a report directory or .ini config: {path}")
    for strategy in args.strategies or []:
        member = config.with_overrides(run={'strategy': strategy})
        dirs.append(_backtest_member(member, Path(args.out) / f"{member.data.label}_{_safe(strategy)}"))
    return dirs


def _safe(name):
    return name.replace(':', '_').replace('(', '_').replace(')', '')


def _backtest_member(config, out_dir):
    say('run', f"Running: {config.run.strategy} on {config.data.label}")
    with RunLogger('backtest', strategy=config.run.strategy, seed=config.run.seed) as run:
        write_report(run_backtest(config, events=run), out_dir)
    return out_dir


def cmd_compare(args):
    config = load_config(args.config, args.seed)
    reference = args.reference or config.metrics.reference
    command_banner('compare', f"reference {reference or 'none'}")
    reports = [read_report(d) for d in _collect_report_dirs(args, config)]
    comparisons = compare_reports(reports, reference, config.metrics.bootstrap_resamples,
                                  config.metrics.block_length, config.run.seed)
    paths = write_comparison(comparisons, args.out, reports, plot=config.run.plot or args.plot)

    table = comparison_frame(comparisons)
    p_values = p_value_frame(comparisons)
    for comp in comparisons:
        print()
        say('heading', f"Dataset: {comp.dataset} (reference: {comp.reference or 'none'})")
        rows = {r['strategy']: {c: r[f"{c}(%)" if c in PERCENT_COLUMNS else c] for c in METRIC_COLUMNS}
                for _, r in table[table['dataset'] == comp.dataset].iterrows()}
        print_metric_table(rows)
        for _, r in p_values[p_values['dataset'] == comp.dataset].iterrows():
            print(f"  p-value vs {r['strategy']:<24} mean_excess={r['p_mean_excess']:.4f}  "
                  f"sharpe_diff={r['p_sharpe_diff']:.4f}")
        for label, regime_rows in sorted(comp.regimes.items()):
            print(f"\n  Regime: {label}")
            print_metric_table(regime_rows)
    print()
    for path in paths:
        print(f"  → {path}")
    say('ok', f"Compared {len(reports)} report(s) across {len(comparisons)} dataset(s)")
    return EXIT_OK


def cmd_report(args):
    if not args.inputs:
        raise ConfigError("report needs a report directory")
    for item in args.inputs:
        report = read_report(item)
        command_banner('report', f"{report.strategy} on {report.dataset} (seed={report.seed})")
        print(f"  Days: {len(report.dates)} ({report.dates[0]} .. {report.dates[-1]})  "
              f"Final value: {report.equity[-1]:,.2f}")
        if report.metrics is not None:
            print_metric_table({report.strategy: {c: report.metrics[c] * (100.0 if c in PERCENT_COLUMNS else 1.0)
                                                  for c in METRIC_COLUMNS}})
        selections = report.payload.get('selections') or []
        chosen = [s for s in selections if s['selected']]
        if chosen:
            print("\n  Hedger per cycle:")
            for s in chosen:
                metric = 'retained' if s['metric'] is None else f"M={s['metric']}"
                print(f"    {s['cycle_start']}  {s['candidate']:<16} {metric}")
        events = report.payload.get('events') or []
        if events:
            print()
            say('warn', f"{len(events)} run event(s)", indent=2)
            for e in events:
                details = ", ".join(f"{k}={v}" for k, v in e.items() if k not in ('event', 'seq'))
                print(f"    [{e['event']}] {details}")
        if args.plot:
            path = plot_equity({report.strategy: (report.dates, report.equity)}, Path(item) / PLOT_FILE,
                               title=f"{report.dataset}: {report.strategy}")
            print(f"  Plot → {path}")
        if args.validate and not validate_report(item):
            return EXIT_DATA
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'train': cmd_train,
    'backtest': cmd_backtest,
    'compare': cmd_compare,
    'report': cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(description="DeltaHedge daily backtesting desk.")
    parser.add_argument('--config', default=None, help="INI run configuration")
    parser.add_argument('--seed', type=int, default=None, help="overrides run.seed")
    parser.add_argument('--out', default=DEFAULT_OUT, help="output directory")
    parser.add_argument('--verbose', action='store_true', help="debug logging")
    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', help="write a seeded synthetic dataset")
    synth.add_argument('--days', type=int, default=DEFAULT_SYNTH_DAYS)
    synth.add_argument('--s0', type=float, default=100.0)
    synth.add_argument('--mu', type=float, default=0.08)
    synth.add_argument('--sigma', type=float, default=0.2)
    synth.add_argument('--rate', type=float, default=0.02)
    synth.add_argument('--shock', type=parse_shock, action='append',
                       help="START_DAY:DAYS:MU:SIGMA drift/vol override (repeatable)")

    sub.add_parser('train', help="train trader and hedger checkpoints")

    backtest = sub.add_parser('backtest', help="run run.strategy over the test period")
    backtest.add_argument('--plot', action='store_true')

    compare = sub.add_parser('compare', help="compare report directories and/or .ini configs")
    compare.add_argument('inputs', nargs='*')
    compare.add_argument('--strategies', type=lambda s: [x.strip() for x in s.split(',') if x.strip()],
                         help="comma-separated strategies to backtest with --config first")
    compare.add_argument('--reference', default=None, help="overrides metrics.reference")
    compare.add_argument('--plot', action='store_true')

    report = sub.add_parser('report', help="print an existing report directory")
    report.add_argument('inputs', nargs='*')
    report.add_argument('--plot', action='store_true')
    report.add_argument('--validate', action='store_true', help="reconcile the equity curve against the trade log")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, argparse.ArgumentTypeError) as e:
        say('fail', f"Configuration error: {e}", stream=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, FileNotFoundError, ReportError, PolicyError, MetricsError) as e:
        say('fail', f"Data error: {e}", stream=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # precondition failures (e.g. synth --days 1, unknown strategy override)
        say('fail', f"Invalid input: {e}", stream=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        say('fail', f"FATAL: {e}", stream=sys.stderr)
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
