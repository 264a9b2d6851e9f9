#!/usr/bin/env python3
"""
Validate a backtest report directory

Checks the files written by `run_desk.py backtest` and reconciles the equity
curve by replaying trades.csv against the dataset named in the report's
config echo: cash, shares and open puts are rebuilt day by day and revalued
with the same marks the engine uses.
"""
import json
import math
import sys
from datetime import date
from pathlib import Path

import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from scripts.backtest.coordinator import prepare_market  # noqa: E402
from scripts.backtest.options_pricing import PutSpec  # noqa: E402
from scripts.backtest.portfolio import PortfolioState, Position, portfolio_value  # noqa: E402
from scripts.backtest.report_io import (  # noqa: E402
    EQUITY_FILE,
    REPORT_FILE,
    SELECTIONS_FILE,
    TRADE_COLUMNS,
    TRADES_FILE,
)
from scripts.backtest.run_config import RunConfig  # noqa: E402

TRADE_KINDS = ('equity', 'option', 'settlement')
RECONCILE_TOLERANCE = 1e-6


def _parse_date(value):
    return None if pd.isna(value) else date.fromisoformat(str(value))


def replay_trades(config, dates, trades, dataset=None):
    """Portfolio value per curve date rebuilt from the trade log alone."""
    slices, _ = prepare_market(config, dataset)
    by_date = {s.date: s for s in slices}
    rows_by_date = {}
    for row in trades.itertuples(index=False):
        rows_by_date.setdefault(_parse_date(row.date), []).append(row)

    cash, shares, book = float(config.run.initial_cash), 0, {}
    values = []
    for day in dates:
        for row in rows_by_date.get(day, []):
            spec = None
            if row.kind != 'equity':
                spec = PutSpec(float(row.strike), _parse_date(row.expiry), int(row.multiplier))
            if row.kind == 'settlement':
                cash += row.quantity * row.price * row.multiplier
                book.pop(spec, None)
            elif row.kind == 'equity':
                cash -= row.quantity * row.price + row.cost
                shares += int(row.quantity)
            else:
                cash -= row.quantity * row.price * row.multiplier + row.cost
                held = book.get(spec, 0) + int(row.quantity)
                if held:
                    book[spec] = held
                else:
                    book.pop(spec, None)
        positions = tuple(Position(spec, n, 0.0) for spec, n in sorted(book.items(), key=lambda kv: (kv[0].expiry, kv[0].strike)))
        state = PortfolioState(day, max(cash, 0.0), shares, positions)
        values.append(portfolio_value(state, by_date[day], config.data.pricing_rate))
    return values


def validate_report(report_dir, dataset=None):
    """Print the validation report; True when every check passes."""
    report_dir = Path(report_dir)
    print("=" * 70)
    print(f"BACKTEST REPORT VALIDATION: {report_dir}")
    print("=" * 70)
    passed = True

    print("\n1. FILES:")
    print("-" * 70)
    for name in (REPORT_FILE, EQUITY_FILE, TRADES_FILE, SELECTIONS_FILE):
        present = (report_dir / name).exists()
        print(f"{'✅' if present else '❌'} {name}")
        passed &= present
    if not passed:
        print("\n❌ VALIDATION FAILED - report incomplete")
        return False

    payload = json.loads((report_dir / REPORT_FILE).read_text(encoding="utf-8"))
    curve = pd.read_csv(report_dir / EQUITY_FILE)
    trades = pd.read_csv(report_dir / TRADES_FILE)
    selections = pd.read_csv(report_dir / SELECTIONS_FILE)
    dates = [date.fromisoformat(d) for d in curve['date']]

    print("\n2. EQUITY CURVE:")
    print("-" * 70)
    increasing = all(b > a for a, b in zip(dates, dates[1:]))
    positive = bool((curve['equity'] > 0).all()) and all(math.isfinite(v) for v in curve['equity'])
    implied = curve['equity'].pct_change().iloc[1:]
    returns_ok = bool(((implied - curve['return'].iloc[1:]).abs() < 1e-8).all())
    days_ok = payload['n_days'] == len(curve)
    for ok, label in ((increasing, "dates strictly increasing"), (positive, "values positive and finite"),
                      (returns_ok, "return column matches equity"), (days_ok, f"{len(curve)} days as reported")):
        print(f"{'✅' if ok else '❌'} {label}")
        passed &= ok

    print("\n3. TRADE LOG:")
    print("-" * 70)
    kinds_ok = list(trades.columns) == TRADE_COLUMNS and set(trades['kind']).issubset(TRADE_KINDS)
    costs_ok = bool((trades['cost'] >= 0).all()) and bool((trades['price'] >= 0).all())
    in_range = all(_parse_date(d) in set(dates) for d in trades['date'])
    counts = trades['kind'].value_counts().to_dict()
    print(f"   {len(trades):,} rows: " + ", ".join(f"{k}={counts.get(k, 0)}" for k in TRADE_KINDS))
    for ok, label in ((kinds_ok, "schema and kinds"), (costs_ok, "non-negative prices and costs"),
                      (in_range, "every trade on a curve date")):
        print(f"{'✅' if ok else '❌'} {label}")
        passed &= ok

    print("\n4. HEDGER SELECTIONS:")
    print("-" * 70)
    cycles = selections.groupby('cycle_start')['selected'].sum() if len(selections) else pd.Series(dtype=int)
    one_each = bool((cycles == 1).all())
    print(f"   {len(cycles)} cycle(s), {len(selections)} candidate row(s)")
    print(f"{'✅' if one_each else '❌'} exactly one selected hedger per cycle")
    passed &= one_each

    print("\n5. EQUITY RECONCILIATION:")
    print("-" * 70)
    try:
        config = RunConfig.model_validate(payload['config'])
        replayed = replay_trades(config, dates, trades, dataset)
        gaps = [abs(a - b) / max(abs(b), 1.0) for a, b in zip(replayed, curve['equity'])]
        worst = max(gaps) if gaps else 0.0
        ok = worst <= RECONCILE_TOLERANCE
        print(f"{'✅' if ok else '❌'} replayed trade log matches equity curve (worst relative gap {worst:.2e})")
        passed &= ok
    except Exception as e:
        print(f"❌ reconciliation failed: {e}")
        passed = False

    print("\n" + "=" * 70)
    print("✅ VALIDATION PASSED" if passed else "❌ VALIDATION FAILED")
    print("=" * 70)
    return passed


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("usage: validate_report.py REPORT_DIR")
        sys.exit(1)
    sys.exit(0 if validate_report(sys.argv[1]) else 1)
