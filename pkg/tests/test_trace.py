"""Trace ingestion: CSV parsing, windowed exponential fits, rate replay."""

import numpy as np
import pytest

from miotcore.arrivals import ks_critical_value
from miotcore.errors import TraceFormatError
from miotcore.trace import (
    LOW_CONFIDENCE_EVENTS,
    TraceWindow,
    make_diurnal_trace,
    parse_trace,
    replay_rate_series,
    save_window_report,
    window_and_fit,
)
from miotcore.traffic import EventStream


def write(tmp_path, text, name="trace.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_trace_sorted_with_ids(tmp_path):
    path = write(tmp_path, "timestamp_s,source_id\n3.5,2\n1.25,7\n2.0,1\n")
    stream, report = parse_trace(path)
    assert np.array_equal(stream.timestamps, [1.25, 2.0, 3.5])
    assert np.array_equal(stream.source_ids, [7, 1, 2])
    assert (report.n_rows, report.n_valid, report.n_malformed,
            report.n_duplicate_timestamps) == (3, 3, 0, 0)
    assert "valid=3" in report.text()


def test_parse_trace_counts_malformed_and_duplicates(tmp_path):
    path = write(tmp_path, "\n".join([
        "timestamp_s,source_id",
        "1.0,3",
        "oops,1",        # non-numeric timestamp
        "-2.0,1",        # negative timestamp
        "inf,1",         # non-finite timestamp
        "2.0,1.5",       # non-integer source id
        "3.0",           # wrong field count
        "1.0,9",         # duplicate timestamp: kept
        "",              # blank line: ignored entirely
        "4.0,0",
    ]) + "\n")
    stream, report = parse_trace(path)
    assert np.array_equal(stream.timestamps, [1.0, 1.0, 4.0])
    # ties keep file order (stable sort)
    assert np.array_equal(stream.source_ids, [3, 9, 0])
    assert report.n_rows == 8
    assert report.n_valid == 3
    assert report.n_malformed == 5
    assert report.n_duplicate_timestamps == 1


def test_parse_trace_errors(tmp_path):
    with pytest.raises(TraceFormatError, match="cannot read"):
        parse_trace(tmp_path / "missing.csv")
    with pytest.raises(TraceFormatError, match="empty"):
        parse_trace(write(tmp_path, "", name="empty.csv"))
    with pytest.raises(TraceFormatError, match="header"):
        parse_trace(write(tmp_path, "time,id\n1.0,2\n", name="hdr.csv"))
    with pytest.raises(TraceFormatError, match="no valid rows"):
        parse_trace(write(tmp_path, "timestamp_s\nnope\n", name="bad.csv"))


def test_parse_roundtrip_is_lossless(tmp_path):
    rng = np.random.default_rng(8)
    stream = EventStream(np.sort(rng.uniform(0.0, 100.0, size=500)),
                         rng.integers(0, 50, size=500))
    path = tmp_path / "events.csv"
    stream.save_csv(path)
    again, report = parse_trace(path)
    assert np.array_equal(again.timestamps, stream.timestamps)
    assert np.array_equal(again.source_ids, stream.source_ids)
    assert report.n_malformed == 0


def test_trace_window_validation():
    with pytest.raises(ValueError):
        TraceWindow(1.0, 1.0, np.array([]), None, None, True)
    with pytest.raises(ValueError):
        TraceWindow(0.0, 1.0, np.array([1.0]), None, None, True)  # t >= end
    with pytest.raises(ValueError):
        TraceWindow(0.0, 1.0, np.array([0.1, 0.2]), -1.0, 0.1, False)


def test_window_and_fit_exact_rate_on_lattice():
    # gaps of exactly 0.125 s: the ML rate is exactly 8/s in every window
    ts = np.arange(512) * 0.125
    windows = window_and_fit(EventStream(ts), 16.0)
    assert len(windows) == 4
    assert [w.n_events for w in windows] == [128, 128, 128, 128]
    assert sum(w.n_events for w in windows) == len(ts)
    for w in windows:
        assert w.rate_hat == 8.0
        assert not w.low_confidence
        # deterministic gaps are nothing like exponential
        assert w.ks_statistic > ks_critical_value(w.n_events - 1, 0.01)
    assert windows[0].start_s == 0.0 and windows[0].end_s == 16.0
    assert windows[-1].start_s == 48.0


def test_window_and_fit_poisson_recovers_rate():
    rng = np.random.default_rng(42)
    rate = 5.0
    ts = np.cumsum(rng.exponential(1.0 / rate, size=18_000))
    windows = window_and_fit(EventStream(ts), 3600.0)
    fitted = windows[0]
    assert fitted.rate_hat == pytest.approx(rate, rel=0.02)
    assert fitted.ks_statistic <= ks_critical_value(fitted.n_events - 1, 0.01)
    assert not fitted.low_confidence


def test_window_and_fit_flags_and_gaps():
    # events only in windows 0 and 2; the empty middle window is kept
    ts = np.array([0.5, 1.0, 1.5, 25.1, 25.2])
    windows = window_and_fit(EventStream(ts), 10.0)
    assert len(windows) == 3
    assert [w.n_events for w in windows] == [3, 0, 2]
    assert windows[1].rate_hat is None and windows[1].ks_statistic is None
    assert all(w.low_confidence for w in windows)  # all below 50 events
    assert windows[2].rate_hat == pytest.approx(1.0 / 0.1, rel=1e-9)
    with pytest.raises(ValueError):
        window_and_fit(EventStream(ts), 0.0)
    assert window_and_fit(EventStream(np.array([])), 10.0) == []


def test_rate_fit_is_exactly_scale_equivariant():
    # doubling every timestamp (an exact binary operation) halves each
    # fitted rate bit-for-bit and leaves the KS statistic untouched
    rng = np.random.default_rng(9)
    ts = np.cumsum(rng.exponential(0.2, size=4000))
    base = window_and_fit(EventStream(ts), 100.0)
    scaled = window_and_fit(EventStream(2.0 * ts), 200.0)
    assert len(base) == len(scaled)
    for a, b in zip(base, scaled):
        assert a.n_events == b.n_events
        if a.rate_hat is None:
            assert b.rate_hat is None
            continue
        assert b.rate_hat == a.rate_hat / 2.0  # exact, not approx
        assert b.ks_statistic == a.ks_statistic


def test_replay_rate_series_orders_and_skips():
    w = [
        TraceWindow(10.0, 20.0, np.array([11.0, 12.0]), 1.0, 0.5, True),
        TraceWindow(0.0, 10.0, np.array([1.0, 3.0]), 0.5, 0.5, True),
        TraceWindow(20.0, 30.0, np.array([]), None, None, True),
    ]
    series = replay_rate_series(w)
    assert series == [(0.0, 0.5), (10.0, 1.0)]
    with pytest.raises(ValueError):
        replay_rate_series([])


def test_save_window_report_columns(tmp_path):
    rng = np.random.default_rng(4)
    ts = np.cumsum(rng.exponential(0.01, size=400))  # ~100/s, ~4s of data
    windows = window_and_fit(EventStream(ts), 1.0)
    path = tmp_path / "windows.csv"
    save_window_report(path, windows)
    lines = path.read_text().splitlines()
    assert lines[0] == "window_start_s,n_events,lambda_hat,ks_stat,ks_pass_1pct"
    assert len(lines) == 1 + len(windows)
    first = lines[1].split(",")
    assert float(first[0]) == windows[0].start_s
    assert int(first[1]) == windows[0].n_events
    assert first[4] in ("0", "1")  # confident window gets a verdict
    # a low-confidence window leaves the verdict blank
    tiny = window_and_fit(EventStream(np.array([0.1, 0.2, 0.3])), 1.0)
    save_window_report(path, tiny)
    assert path.read_text().splitlines()[1].endswith(",")


def test_make_diurnal_trace_follows_shape():
    shape = (0.5, 1.0, 2.0)
    stream = make_diurnal_trace(10.0, shape=shape, window_length_s=500.0, seed=3)
    windows = window_and_fit(stream, 500.0)
    assert len(windows) == 3
    rates = [w.rate_hat for w in windows]
    assert rates[0] == pytest.approx(5.0, rel=0.1)
    assert rates[1] == pytest.approx(10.0, rel=0.1)
    assert rates[2] == pytest.approx(20.0, rel=0.1)
    again = make_diurnal_trace(10.0, shape=shape, window_length_s=500.0, seed=3)
    assert np.array_equal(stream.timestamps, again.timestamps)
    with pytest.raises(ValueError):
        make_diurnal_trace(0.0)
    with pytest.raises(ValueError):
        make_diurnal_trace(10.0, shape=())
