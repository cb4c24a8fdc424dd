"""Event-log ingestion: parse request traces, window them, fit exponential gaps.

A trace is a CSV of request timestamps (header ``timestamp_s`` with an
optional ``source_id`` column).  The pipeline turns it into a sorted
EventStream, partitions time into fixed-length windows, fits an
exponential inter-arrival model per window by maximum likelihood
(lambda_hat = (n-1) / sum of within-window gaps), scores each fit with the
Kolmogorov-Smirnov statistic, and exports an ordered rate series that the
capacity-scaling loop can replay.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .arrivals import ks_critical_value, ks_distance
from .errors import TraceFormatError
from .traffic import EventStream

LOW_CONFIDENCE_EVENTS = 50

DIURNAL_SHAPE_DEFAULT = (0.2, 0.35, 0.6, 1.0, 1.5, 2.0, 1.7, 1.2)


@dataclass(frozen=True)
class TraceParseReport:
    """Row accounting for one parsed trace file."""

    n_rows: int
    n_valid: int
    n_malformed: int
    n_duplicate_timestamps: int

    def text(self):
        return (
            f"rows={self.n_rows} valid={self.n_valid} "
            f"malformed_rejected={self.n_malformed} "
            f"duplicate_timestamps_kept={self.n_duplicate_timestamps}"
        )


@dataclass(frozen=True)
class TraceWindow:
    """One fixed-length time window with its exponential gap fit.

    ``rate_hat`` is the maximum-likelihood exponential rate fitted to the
    inter-arrival gaps inside the window (None below 2 events),
    ``ks_statistic`` the KS distance of those gaps against Exp(rate_hat)
    (None below 3 events, where the distance is meaningless).  Windows
    with fewer than LOW_CONFIDENCE_EVENTS events are flagged
    low-confidence.
    """

    start_s: float
    end_s: float
    timestamps: np.ndarray
    rate_hat: Optional[float]
    ks_statistic: Optional[float]
    low_confidence: bool

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError("window start must precede its end")
        ts = np.asarray(self.timestamps, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        if ts.size and (ts.min() < self.start_s or ts.max() >= self.end_s):
            raise ValueError("window timestamps must lie in [start_s, end_s)")
        if ts.size >= 2 and self.rate_hat is not None and not self.rate_hat > 0.0:
            raise ValueError("fitted rate must be positive")

    @property
    def n_events(self):
        return int(self.timestamps.size)


def parse_trace(path):
    """Read a request-trace CSV into a sorted EventStream.

    The file must start with a header line ``timestamp_s`` or
    ``timestamp_s,source_id``.  Rows out of order are allowed (output is
    sorted, stable on ties).  Malformed rows (wrong field count,
    non-numeric or negative or non-finite timestamps, non-integer source
    ids) are rejected and counted; duplicate timestamps are kept and
    counted.  Returns ``(stream, report)``.

    Raises TraceFormatError if the file is unreadable, the header is
    unknown, or no valid rows remain.
    """
    try:
        fh = open(path, "r", newline="")
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace {path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"trace {path!r} is empty") from None
        header = [h.strip() for h in header]
        if header == ["timestamp_s"]:
            with_ids = False
        elif header == ["timestamp_s", "source_id"]:
            with_ids = True
        else:
            raise TraceFormatError(
                f"trace {path!r}: header must be 'timestamp_s[,source_id]', "
                f"got {','.join(header)!r}"
            )
        times = []
        ids = []
        n_rows = 0
        n_malformed = 0
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            n_rows += 1
            if len(row) != len(header):
                n_malformed += 1
                continue
            try:
                t = float(row[0])
            except ValueError:
                n_malformed += 1
                continue
            if not math.isfinite(t) or t < 0.0:
                n_malformed += 1
                continue
            if with_ids:
                try:
                    sid = int(row[1])
                except ValueError:
                    n_malformed += 1
                    continue
                ids.append(sid)
            times.append(t)
    if not times:
        raise TraceFormatError(f"trace {path!r} contains no valid rows")
    times = np.asarray(times, dtype=float)
    order = np.argsort(times, kind="stable")
    times = times[order]
    n_dup = int(times.size - np.unique(times).size)
    stream = EventStream(
        times,
        np.asarray(ids, dtype=np.int64)[order] if with_ids else None,
    )
    report = TraceParseReport(
        n_rows=n_rows,
        n_valid=int(times.size),
        n_malformed=n_malformed,
        n_duplicate_timestamps=n_dup,
    )
    return stream, report


def _fit_window(start, end, ts):
    rate = None
    ks = None
    if ts.size >= 2:
        gaps = np.diff(ts)
        total = float(gaps.sum())
        if total > 0.0:
            rate = (ts.size - 1) / total
            if gaps.size >= 2:
                ks = ks_distance(gaps, lambda x, r=rate: -np.expm1(-r * np.asarray(x)))
    return TraceWindow(
        start_s=float(start),
        end_s=float(end),
        timestamps=ts,
        rate_hat=rate,
        ks_statistic=ks,
        low_confidence=ts.size < LOW_CONFIDENCE_EVENTS,
    )


def window_and_fit(stream, window_length_s):
    """Partition a stream into fixed windows and fit Exp gaps per window.

    Windows are [k*L, (k+1)*L) for the integer range covering the stream,
    so per-window event counts sum to the stream length.  Per window the
    exponential rate is fitted by maximum likelihood on the within-window
    gaps (no cross-window gap) and scored with the KS statistic; windows
    with fewer than LOW_CONFIDENCE_EVENTS events are flagged.
    """
    if not window_length_s > 0.0:
        raise ValueError(f"window_length_s must be positive, got {window_length_s!r}")
    ts = np.asarray(stream.timestamps, dtype=float)
    if ts.size == 0:
        return []
    length = float(window_length_s)
    k0 = int(math.floor(ts[0] / length))
    k1 = int(math.floor(ts[-1] / length))
    windows = []
    for k in range(k0, k1 + 1):
        start = k * length
        end = (k + 1) * length
        lo = np.searchsorted(ts, start, side="left")
        hi = np.searchsorted(ts, end, side="left")
        windows.append(_fit_window(start, end, ts[lo:hi]))
    return windows


def replay_rate_series(windows):
    """Ordered (window_start_s, rate_hat) pairs for the scaling loop.

    Windows without a fitted rate (fewer than 2 events) are skipped.
    """
    if not windows:
        raise ValueError("need at least one window")
    series = []
    for w in sorted(windows, key=lambda w: w.start_s):
        if w.rate_hat is not None:
            series.append((w.start_s, w.rate_hat))
    return series


def save_window_report(path, windows, significance=0.01):
    """Write the per-window fit report CSV.

    Columns: window_start_s, n_events, lambda_hat, ks_stat, ks_pass_1pct.
    The pass column is empty for windows flagged low-confidence (the
    asymptotic critical value is not trustworthy there).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start_s", "n_events", "lambda_hat", "ks_stat", "ks_pass_1pct"])
        for win in windows:
            rate = "" if win.rate_hat is None else repr(win.rate_hat)
            ks = "" if win.ks_statistic is None else repr(win.ks_statistic)
            verdict = ""
            if win.ks_statistic is not None and win.n_events - 1 >= LOW_CONFIDENCE_EVENTS:
                crit = ks_critical_value(win.n_events - 1, significance)
                verdict = int(win.ks_statistic <= crit)
            w.writerow([repr(win.start_s), win.n_events, rate, ks, verdict])


def make_diurnal_trace(base_rate_per_s, shape=DIURNAL_SHAPE_DEFAULT,
                       window_length_s=3600.0, seed=0):
    """Generate a synthetic piecewise-constant-rate Poisson trace.

    ``shape`` gives one relative rate per window; window k has Poisson
    arrivals at base_rate_per_s * shape[k] over [k*L, (k+1)*L).  The
    default 8-window shape ramps up through the morning and eases off, the
    texture of an urban sensor log.  Deterministic for a fixed seed.
    """
    if not base_rate_per_s > 0.0:
        raise ValueError("base_rate_per_s must be positive")
    if not shape:
        raise ValueError("shape must be non-empty")
    rng = np.random.default_rng(seed)
    times = []
    length = float(window_length_s)
    for k, rel in enumerate(shape):
        rate = base_rate_per_s * float(rel)
        if rate <= 0.0:
            continue
        t = k * length
        chunk = []
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= (k + 1) * length:
                break
            chunk.append(t)
        times.extend(chunk)
    return EventStream(np.asarray(times, dtype=float), None)
