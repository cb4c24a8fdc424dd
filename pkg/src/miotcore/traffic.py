"""Two-state Markov traffic sources with a Beta(3,4) alarm hazard.

Each source idles in a Regular state and occasionally jumps to an Alarm
state; the per-slot transition probability follows the sampled Beta(3,4)
shape over a period of T seconds, so every source visits Alarm roughly
once per period.  On each Alarm visit the source emits a bearer request
with a fixed probability and is back in Regular one slot later.
"""

import csv
import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

# P(at least one packet during an alarm visit) for unit per-slot packet rate
TX_PROBABILITY_DEFAULT = 1.0 - math.exp(-1.0)

# -ln(1-f) for f=1 is infinite; clamped so deterministic slots stay
# selectable by the inverse-transform search without breaking prefix sums
_HAZARD_CLAMP = 745.0

# a healthy hazard grid accumulates ~1 unit of hazard per period; waiting
# longer than this many periods signals a degenerate grid
_MAX_WAIT_PERIODS = 1000

_PREFIX_CACHE = {}


class Mode(Enum):
    REGULAR = "regular"
    ALARM = "alarm"


@dataclass(frozen=True)
class SourceState:
    """Mode of one source; a source in Alarm at slot n is Regular at n+1."""

    mode: Mode
    group_id: int


@dataclass(frozen=True)
class TrafficParams:
    """Slot grid and per-source rates of the two-state source model.

    n_slots = round(period_s / slot_delta_s) defines the hazard grid; the
    default tx_probability is 1 - exp(-alarm_rate_lambda), the chance of
    at least one packet from a Poisson packet count during an alarm visit.
    """

    period_s: float = 10.0
    slot_delta_s: float = 1e-5
    alarm_rate_lambda: float = 1.0
    regular_rate_epsilon: float = 0.0
    tx_probability: Optional[float] = None
    # per-slot override for slots 1..N (diagnostics and tests only)
    hazard: Optional[tuple] = None

    def __post_init__(self):
        if self.period_s <= 0:
            raise ValueError("period_s must be positive")
        if self.slot_delta_s <= 0:
            raise ValueError("slot_delta_s must be positive")
        if self.n_slots < 100:
            raise ValueError(
                f"slot grid too coarse: n_slots={self.n_slots}, need >= 100")
        if self.regular_rate_epsilon < 0:
            raise ValueError("regular_rate_epsilon must be >= 0")
        if self.tx_probability is None:
            object.__setattr__(
                self, "tx_probability", 1.0 - math.exp(-self.alarm_rate_lambda))
        if not 0.0 < self.tx_probability <= 1.0:
            raise ValueError("tx_probability must be in (0, 1]")
        if self.hazard is not None:
            if len(self.hazard) != self.n_slots:
                raise ValueError("hazard override must have n_slots entries")
            if min(self.hazard) < 0.0 or max(self.hazard) > 1.0:
                raise ValueError("hazard values must lie in [0, 1]")

    @property
    def n_slots(self) -> int:
        return round(self.period_s / self.slot_delta_s)


@dataclass(frozen=True)
class SourcePopulation:
    """Groups of phase-aligned sources; all members of a group share one offset."""

    group_size: int
    n_groups: int
    offsets_s: Optional[tuple] = None  # one per group, seconds in [0, T)

    def __post_init__(self):
        if self.group_size < 1 or self.n_groups < 1:
            raise ValueError("group_size and n_groups must be >= 1")
        if self.offsets_s is not None:
            if len(self.offsets_s) != self.n_groups:
                raise ValueError("need one offset per group")
            if min(self.offsets_s) < 0.0:
                raise ValueError("offsets must be >= 0")

    @property
    def q_total(self) -> int:
        return self.group_size * self.n_groups


class EventStream:
    """Sorted bearer-request timestamps with optional per-event source ids."""

    def __init__(self, timestamps, source_ids=None):
        self.timestamps = np.asarray(timestamps, dtype=np.float64)
        if self.timestamps.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if source_ids is not None:
            source_ids = np.asarray(source_ids, dtype=np.int64)
            if source_ids.shape != self.timestamps.shape:
                raise ValueError("source_ids must match timestamps")
        self.source_ids = source_ids

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        if not np.array_equal(self.timestamps, other.timestamps):
            return False
        if (self.source_ids is None) != (other.source_ids is None):
            return False
        return self.source_ids is None or np.array_equal(
            self.source_ids, other.source_ids)

    def gaps(self) -> np.ndarray:
        return np.diff(self.timestamps)

    def mean_rate(self) -> float:
        if len(self) < 2:
            raise ValueError("need >= 2 events for a rate")
        return (len(self) - 1) / (self.timestamps[-1] - self.timestamps[0])

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.source_ids is None:
                w.writerow(["timestamp_s"])
                for t in self.timestamps:
                    w.writerow([repr(float(t))])
            else:
                w.writerow(["timestamp_s", "source_id"])
                for t, s in zip(self.timestamps, self.source_ids):
                    w.writerow([repr(float(t)), int(s)])

    def save_binary(self, path):
        """Length-prefixed stream: little-endian u64 count, then f64 seconds."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(self.timestamps)))
            fh.write(self.timestamps.astype("<f8").tobytes())

    @classmethod
    def load_binary(cls, path):
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<Q", fh.read(8))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if len(data) != count:
            raise ValueError(f"truncated stream: header says {count}, got {len(data)}")
        return cls(data.copy())


def beta_pmf(n, params):
    """Per-slot alarm probability 60*(n*d/T)^2 * (1-n*d/T)^3 * (d/T).

    `params` is a TrafficParams or a bare slot count N (d/T = 1/N either
    way).  The grid values sum to ~1 over one period, so each source
    visits Alarm about once every T seconds.
    """
    n_slots = params.n_slots if isinstance(params, TrafficParams) else int(params)
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or np.any(n_arr > n_slots):
        raise ValueError(f"slot index out of [0, {n_slots}]")
    x = n_arr / n_slots
    out = 60.0 * x**2 * (1.0 - x) ** 3 / n_slots
    return float(out) if np.isscalar(n) else out


def beta_pdf(x, period_s):
    """Continuous alarm density 60*(x/T)^2 * (1-x/T)^3 / T on [0, T]."""
    x_arr = np.asarray(x)
    if np.any(x_arr < 0) or np.any(x_arr > period_s):
        raise ValueError(f"x out of [0, {period_s}]")
    u = x_arr / period_s
    out = 60.0 * u**2 * (1.0 - u) ** 3 / period_s
    return float(out) if np.isscalar(x) else out


def hazard_grid(params: TrafficParams) -> np.ndarray:
    """Per-slot transition probabilities f(1..N), Beta shape unless overridden."""
    if params.hazard is not None:
        return np.asarray(params.hazard, dtype=np.float64)
    return beta_pmf(np.arange(1, params.n_slots + 1), params)


def _prefix(params: TrafficParams):
    """Cumulative -ln(1-f) over one period: P[0..N], and the period total."""
    cached = _PREFIX_CACHE.get(params)
    if cached is not None:
        return cached
    f = hazard_grid(params)
    with np.errstate(divide="ignore"):
        h = -np.log1p(-f)
    h[~np.isfinite(h)] = _HAZARD_CLAMP
    h = np.minimum(h, _HAZARD_CLAMP)
    prefix = np.concatenate(([0.0], np.cumsum(h)))
    _PREFIX_CACHE[params] = (prefix, float(prefix[-1]))
    return _PREFIX_CACHE[params]


def _slots_from_targets(prefix, phi, n_slots, targets):
    """Smallest absolute slots y with cumulative hazard(y) >= targets."""
    periods = np.floor_divide(targets, phi).astype(np.int64)
    residual = targets - periods * phi
    j = np.searchsorted(prefix, residual, side="left")
    j = np.maximum(j, 1)
    return periods * n_slots + j


def sample_next_alarm(current_slot, offset, rng, params: TrafficParams) -> int:
    """First slot m > current_slot whose Bernoulli(f(mod(m+offset, N))) fires.

    Inverse-transform on the prefix sums of -ln(1-f): draw E ~ Exp(1) and
    binary-search the first slot where the accumulated hazard since
    current_slot reaches E.  Absolute slot indices, wrapping across periods.
    """
    prefix, phi = _prefix(params)
    if phi <= 0.0:
        raise RuntimeError("degenerate hazard grid: no slot has positive hazard")
    n_slots = params.n_slots
    y = int(current_slot) + int(offset)
    base = (y // n_slots) * phi + prefix[y % n_slots]
    wait = rng.exponential()
    if wait > _MAX_WAIT_PERIODS * phi:
        raise RuntimeError(
            f"no alarm within {_MAX_WAIT_PERIODS} periods: degenerate hazard grid")
    target = np.asarray([base + wait])
    slot = int(_slots_from_targets(prefix, phi, n_slots, target)[0])
    return slot - int(offset)


def generate_requests(population: SourcePopulation, params: TrafficParams,
                      horizon_s: float, seed) -> EventStream:
    """Simulate all sources over [0, horizon] and merge their requests.

    Every source alternates Regular/Alarm per the slot hazard; an alarm at
    slot s forces Regular at s+1, so the next alarm is at s+2 or later.
    Each alarm emits one request with probability tx_probability.  The
    merged stream is sorted by (time, source id) and is a pure function of
    (population, params, horizon, seed).
    """
    if horizon_s < params.period_s:
        raise ValueError("horizon must cover at least one period")
    rng = np.random.default_rng(seed)
    prefix, phi = _prefix(params)
    if phi <= 0.0:
        raise RuntimeError("degenerate hazard grid: no slot has positive hazard")
    n_slots = params.n_slots
    delta = params.slot_delta_s

    if population.offsets_s is None:
        offsets_s = rng.uniform(0.0, params.period_s, size=population.n_groups)
    else:
        offsets_s = np.asarray(population.offsets_s, dtype=np.float64)
        if np.any(offsets_s >= params.period_s):
            raise ValueError("offsets must lie in [0, period_s)")
    group_phase = (offsets_s / delta).astype(np.int64) % n_slots
    phase = np.repeat(group_phase, population.group_size)

    q_total = population.q_total
    # cumulative hazard consumed so far, in shifted (per-source) coordinates
    base = prefix[phase % n_slots].copy()
    alive = np.ones(q_total, dtype=bool)
    max_wait = _MAX_WAIT_PERIODS * phi

    times, ids = [], []
    while alive.any():
        idx = np.flatnonzero(alive)
        wait = rng.exponential(size=idx.size)
        if np.any(wait > max_wait):
            raise RuntimeError(
                f"no alarm within {_MAX_WAIT_PERIODS} periods: degenerate hazard grid")
        y_alarm = _slots_from_targets(prefix, phi, n_slots, base[idx] + wait)
        t_alarm = (y_alarm - phase[idx]) * delta
        expired = t_alarm > horizon_s
        alive[idx[expired]] = False
        live = ~expired
        if not live.any():
            continue
        y_live = y_alarm[live]
        emit = rng.random(size=len(y_live)) < params.tx_probability
        times.append(t_alarm[live][emit])
        ids.append(idx[live][emit])
        # forced Regular at the slot after the alarm: hazard resumes at +2
        y_resume = y_live + 1
        base[idx[live]] = ((y_resume // n_slots) * phi
                           + prefix[y_resume % n_slots])

    if params.regular_rate_epsilon > 0.0:
        counts = rng.poisson(params.regular_rate_epsilon * horizon_s, size=q_total)
        total = int(counts.sum())
        times.append(rng.uniform(0.0, horizon_s, size=total))
        ids.append(np.repeat(np.arange(q_total), counts))

    t_all = np.concatenate(times) if times else np.empty(0)
    id_all = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
    order = np.lexsort((id_all, t_all))
    return EventStream(t_all[order], id_all[order])
