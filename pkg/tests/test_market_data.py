"""Tests for feed loading, validation errors, calendar alignment and synthetic data."""
from datetime import date

import numpy as np
import pytest

from scripts.backtest.market_data import (
    NEUTRAL_VIX,
    Bar,
    DataValidationError,
    DriftShock,
    OptionQuote,
    SentimentRecord,
    VixRecord,
    align_calendar,
    load_bars,
    load_dataset,
    load_option_chain,
    load_sentiment,
    load_vix,
    synth_generate,
    write_dataset,
)

BARS_HEADER = "date,open,high,low,close,volume\n"
OPTIONS_HEADER = "date,expiry,strike,right,bid,ask,delta,volume,open_interest\n"


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _bar(day, close=100.0):
    return Bar(day, close, close + 1.0, close - 1.0, close, 1000)


def test_load_bars_reads_valid_rows(tmp_path):
    path = _write(tmp_path, "bars.csv", BARS_HEADER
                  + "2024-01-02,100,101,99,100.5,1000\n"
                  + "2024-01-03,100.5,102,100,101.5,1200\n")
    bars = load_bars(path)
    assert [b.date for b in bars] == [date(2024, 1, 2), date(2024, 1, 3)]
    assert bars[1].close == 101.5
    assert bars[1].volume == 1200


@pytest.mark.parametrize("rows,line,fragment", [
    ("2024-01-02,100,101,99,100,1000\n2024-01-02,100,101,99,100,1000\n", 3, "duplicate date"),
    ("2024-01-03,100,101,99,100,1000\n2024-01-02,100,101,99,100,1000\n", 3, "non-monotone"),
    ("2024-01-02,100,101,99,100,1000\n2024-01-03,100,101,99,-5,1000\n", 3, "close"),
    ("2024-01-02,100,101,99,abc,1000\n", 2, "not a number"),
    ("2024/01/02,100,101,99,100,1000\n", 2, "ISO date"),
    ("2024-01-02,100,101,99,100,1.5\n", 2, "non-negative integer"),
    ("2024-01-02,100,99,98,100,1000\n", 2, "high below"),
])
def test_load_bars_reports_file_and_line(tmp_path, rows, line, fragment):
    path = _write(tmp_path, "bars.csv", BARS_HEADER + rows)
    with pytest.raises(DataValidationError) as excinfo:
        load_bars(path)
    assert excinfo.value.line == line
    assert f"bars.csv:{line}" in str(excinfo.value)
    assert fragment in str(excinfo.value)


def test_load_bars_rejects_wrong_header(tmp_path):
    path = _write(tmp_path, "bars.csv", "day,open,high,low,close,volume\n2024-01-02,1,1,1,1,1\n")
    with pytest.raises(DataValidationError) as excinfo:
        load_bars(path)
    assert excinfo.value.line == 1


def test_missing_bars_file_is_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_bars(tmp_path / "nope.csv")


def test_option_chain_optional_delta_and_errors(tmp_path):
    path = _write(tmp_path, "options.csv", OPTIONS_HEADER
                  + "2024-01-02,2024-02-02,100,put,1.9,2.1,,50,500\n"
                  + "2024-01-02,2024-02-02,95,put,0.8,0.9,-0.25,50,500\n")
    quotes = load_option_chain(path)
    assert quotes[0].delta is None
    assert quotes[1].delta == -0.25
    assert quotes[0].mid == pytest.approx(2.0)

    bad = _write(tmp_path, "bad.csv", OPTIONS_HEADER + "2024-01-02,2024-02-02,100,put,2.2,2.1,,50,500\n")
    with pytest.raises(DataValidationError, match="above ask"):
        load_option_chain(bad)
    dup = _write(tmp_path, "dup.csv", OPTIONS_HEADER
                 + "2024-01-02,2024-02-02,100,put,1.9,2.1,,50,500\n"
                 + "2024-01-02,2024-02-02,100,put,1.8,2.0,,50,500\n")
    with pytest.raises(DataValidationError, match="duplicate contract") as excinfo:
        load_option_chain(dup)
    assert excinfo.value.line == 3
    delta = _write(tmp_path, "delta.csv", OPTIONS_HEADER + "2024-01-02,2024-02-02,100,put,1.9,2.1,0.3,50,500\n")
    with pytest.raises(DataValidationError, match="outside"):
        load_option_chain(delta)


def test_sentiment_and_vix_validation(tmp_path):
    sent = _write(tmp_path, "sentiment.csv", "date,score\n2024-01-02,40\n2024-01-02,60\n")
    assert len(load_sentiment(sent)) == 2
    with pytest.raises(DataValidationError, match="outside"):
        load_sentiment(_write(tmp_path, "s2.csv", "date,score\n2024-01-02,140\n"))
    with pytest.raises(DataValidationError, match="duplicate date"):
        load_vix(_write(tmp_path, "v.csv", "date,level\n2024-01-02,20\n2024-01-02,21\n"))


def test_load_dataset_tolerates_missing_optional_feeds(tmp_path):
    _write(tmp_path, "bars.csv", BARS_HEADER + "2024-01-02,100,101,99,100,1000\n")
    dataset = load_dataset(tmp_path)
    assert len(dataset.bars) == 1
    assert dataset.options == [] and dataset.sentiment == [] and dataset.vix == []


def test_align_forward_fills_and_defaults():
    days = [date(2024, 1, d) for d in (2, 3, 4, 5)]
    bars = [_bar(d) for d in days]
    sentiment = [SentimentRecord(days[1], 30.0), SentimentRecord(days[1], 50.0)]
    vix = [VixRecord(days[2], 25.0)]
    quote = OptionQuote(days[0], date(2024, 2, 2), 100.0, 'put', 1.0, 1.1, None, 10, 10)
    call = OptionQuote(days[0], date(2024, 2, 2), 100.0, 'call', 1.0, 1.1, None, 10, 10)

    slices = align_calendar(bars, [quote, call], sentiment, vix)

    assert [s.date for s in slices] == days
    # first sentiment back-fills, averages within a day, then carries forward
    assert [s.sentiment for s in slices] == [40.0, 40.0, 40.0, 40.0]
    assert [s.vix for s in slices] == [25.0, 25.0, 25.0, 25.0]
    assert slices[0].puts == (quote,)
    assert slices[1].puts == ()


def test_align_neutral_values_without_feeds():
    slices = align_calendar([_bar(date(2024, 1, 2))])
    assert slices[0].sentiment == 50.0
    assert slices[0].vix == NEUTRAL_VIX
    with pytest.raises(DataValidationError):
        align_calendar([_bar(date(2024, 1, 2))], require_vix=True)


def test_synth_is_deterministic_and_round_trips(tmp_path):
    first = synth_generate(11, 30)
    second = synth_generate(11, 30)
    assert first.bars == second.bars and first.options == second.options

    out_a, out_b = tmp_path / "a", tmp_path / "b"
    write_dataset(first, out_a)
    write_dataset(second, out_b)
    for name in ("bars.csv", "options.csv", "sentiment.csv", "vix.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    loaded = load_dataset(out_a)
    assert [b.close for b in loaded.bars] == [b.close for b in first.bars]
    assert len(loaded.options) == 30 * 11


def test_synth_rejects_short_series():
    with pytest.raises(ValueError):
        synth_generate(0, 1)


def test_synth_shock_lowers_drift():
    calm = synth_generate(3, 120)
    crash = synth_generate(3, 120, shocks=(DriftShock(40, 40, -3.0, 0.6),))
    assert crash.bars[79].close < calm.bars[79].close
    assert crash.vix[60].level > calm.vix[60].level


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_synth_log_return_std_matches_sigma(seed):
    sigma = 0.2
    dataset = synth_generate(seed, 252, sigma=sigma)
    closes = np.array([bar.close for bar in dataset.bars])
    realised = np.std(np.diff(np.log(closes)), ddof=1)
    assert realised == pytest.approx(sigma / np.sqrt(252), rel=0.15)
