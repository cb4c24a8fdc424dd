"""Threshold-based capacity scaling driven by the analytic delay model.

The controller watches the bearer-request rate, predicts the delay
percentile from the analytic model at each available capacity multiplier,
and picks the smallest multiplier whose prediction meets the target.  A
hysteresis band (a fraction of the target) makes scale-down decisions
sticky so the controller does not flap on a noisy rate series.  The
closed loop replays a measured rate series window by window: decide from
the model, then simulate the window and record the empirical percentile.
"""

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .delay import (
    ENTITY_MME,
    build_delay_model,
    constant_delay_K,
    delay_percentile,
)
from .errors import ConfigurationError, OverloadError
from .simulator import single_job_mode
from .traffic import EventStream

_RHO_PREDICT_MAX = 0.995


@dataclass(frozen=True)
class ScalingPolicy:
    """Scaling targets and the capacity steps available to the controller.

    ``scale_entities`` restricts which entities get their capacity
    multiplied (None scales every entity together); ``hysteresis`` is the
    fraction of the target by which a smaller multiplier must beat the
    target before the controller scales down.
    """

    target_delay_s: float = 0.1
    percentile: float = 0.99
    multipliers: tuple = (1.0, 2.0, 2.5)
    hysteresis: float = 0.1
    scale_entities: Optional[frozenset] = None

    def __post_init__(self):
        if not self.target_delay_s > 0.0:
            raise ConfigurationError("target_delay_s must be positive")
        if not 0.0 < self.percentile < 1.0:
            raise ConfigurationError(
                f"percentile must lie in (0, 1), got {self.percentile!r}"
            )
        mults = tuple(float(m) for m in self.multipliers)
        object.__setattr__(self, "multipliers", mults)
        if not mults or mults[0] != 1.0:
            raise ConfigurationError("multipliers must start at 1.0")
        if any(b <= a for a, b in zip(mults, mults[1:])):
            raise ConfigurationError("multipliers must be strictly ascending")
        if not 0.0 <= self.hysteresis < 1.0:
            raise ConfigurationError("hysteresis must lie in [0, 1)")
        if self.scale_entities is not None:
            object.__setattr__(self, "scale_entities", frozenset(self.scale_entities))


@dataclass(frozen=True)
class ScalingDecision:
    """One controller decision for a given input rate.

    ``feasible`` is False when no listed multiplier meets the target; the
    decision then carries the largest multiplier as the best effort.
    """

    lambda_beta: float
    multiplier: float
    predicted_delay_s: float
    predicted_at_unit_s: float
    feasible: bool


def scaled_profiles(profiles, multiplier, policy=None):
    """Profiles with capacities multiplied for the policy's scaled entities."""
    if not multiplier > 0.0:
        raise ConfigurationError("multiplier must be positive")
    scope = None if policy is None else policy.scale_entities
    out = []
    for prof in profiles:
        if scope is None or prof.entity in scope:
            out.append(replace(prof, capacity=prof.capacity * multiplier))
        else:
            out.append(prof)
    return tuple(out)


def predict_percentile(lambda_beta, multiplier, profiles, policy):
    """Model-predicted delay percentile with capacities scaled by ``multiplier``.

    Returns the analytic percentile in seconds, or ``math.inf`` as the
    infeasibility signal when the MME is overloaded at this multiplier --
    including loads above 0.995, where the mean sojourn already exceeds
    200 deterministic service times and the tail model has no useful
    resolution.
    """
    profs = scaled_profiles(profiles, multiplier, policy)
    mme = next((p for p in profs if p.entity == ENTITY_MME), None)
    if mme is None:
        raise ConfigurationError(f"profiles must include {ENTITY_MME!r}")
    rho = lambda_beta * mme.ops_per_bearer / mme.capacity
    if rho >= _RHO_PREDICT_MAX:
        return math.inf
    try:
        model = build_delay_model(lambda_beta, profs)
    except OverloadError:
        return math.inf
    return delay_percentile(policy.percentile, model)


def choose_multiplier(lambda_beta, profiles, policy, previous=None):
    """Smallest listed multiplier whose predicted percentile meets the target.

    With a ``previous`` decision, any candidate smaller than the previous
    multiplier must beat ``target * (1 - hysteresis)``, so the controller
    scales down only once the load has genuinely receded.  When no
    multiplier is feasible the largest is returned with ``feasible=False``.
    """
    cache = {}

    def pred(m):
        if m not in cache:
            cache[m] = predict_percentile(lambda_beta, m, profiles, policy)
        return cache[m]

    prev_mult = previous.multiplier if previous is not None else None
    chosen = None
    for mult in policy.multipliers:
        limit = policy.target_delay_s
        if prev_mult is not None and mult < prev_mult:
            limit *= 1.0 - policy.hysteresis
        if pred(mult) <= limit:
            chosen = mult
            break
    feasible = chosen is not None
    if not feasible:
        chosen = policy.multipliers[-1]
    return ScalingDecision(
        lambda_beta=float(lambda_beta),
        multiplier=chosen,
        predicted_delay_s=pred(chosen),
        predicted_at_unit_s=pred(policy.multipliers[0]),
        feasible=feasible,
    )


@dataclass(frozen=True)
class LoopRecord:
    """One closed-loop window: the decision plus the simulated outcome."""

    window_start_s: float
    lambda_hat: float
    decision: ScalingDecision
    empirical_percentile_s: float


def _poisson_arrivals(rate, length_s, rng):
    """Poisson arrival times over [0, length_s), sorted."""
    times = []
    t = 0.0
    mean_n = rate * length_s
    chunk = max(16, int(mean_n + 6.0 * math.sqrt(mean_n + 1.0)))
    while True:
        gaps = rng.exponential(1.0 / rate, chunk)
        cum = t + np.cumsum(gaps)
        inside = cum[cum < length_s]
        times.append(inside)
        if inside.size < cum.size:
            break
        t = float(cum[-1])
    return np.concatenate(times)


def run_scaling_loop(rate_series, profiles, policy, window_length_s=None, seed=0):
    """Replay a rate series through the controller, simulating each window.

    ``rate_series`` is an ordered list of (window_start_s, rate) pairs.
    Per window the controller decides a multiplier from the analytic model
    (with hysteresis against the previous decision), then the window is
    simulated in single-job mode at that multiplier -- Poisson arrivals at
    the measured rate over the window length, job size O_MME at the scaled
    capacity plus the scaled constant offset -- and the empirical delay
    percentile is recorded.  Windows start from an empty queue (capacity
    changes take effect at window boundaries with no switchover cost).

    ``window_length_s`` overrides the window duration; by default it is
    inferred from consecutive starts (a single-window series needs it
    explicitly).  Deterministic for fixed (series, seed).
    """
    series = [(float(s), float(r)) for s, r in rate_series]
    if not series:
        raise ValueError("rate series must be non-empty")
    starts = [s for s, _ in series]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValueError("window starts must be strictly increasing")
    if window_length_s is not None:
        lengths = [float(window_length_s)] * len(series)
    elif len(series) >= 2:
        diffs = [b - a for a, b in zip(starts, starts[1:])]
        lengths = diffs + [diffs[-1]]
    else:
        raise ValueError("window_length_s is required for a single-window series")

    child_seeds = np.random.SeedSequence(seed).spawn(len(series))
    records = []
    previous = None
    for (start, rate), length, child in zip(series, lengths, child_seeds):
        if not rate > 0.0:
            raise ValueError(f"window at {start!r} has non-positive rate {rate!r}")
        decision = choose_multiplier(rate, profiles, policy, previous=previous)
        profs = scaled_profiles(profiles, decision.multiplier, policy)
        mme = next(p for p in profs if p.entity == ENTITY_MME)
        offset = constant_delay_K(profs)
        rng = np.random.default_rng(child)
        arrivals = _poisson_arrivals(rate, length, rng)
        if arrivals.size:
            samples = single_job_mode(EventStream(arrivals, None), mme, offset)
            empirical = samples.delay_percentile(policy.percentile)
        else:
            empirical = math.nan
        records.append(
            LoopRecord(
                window_start_s=start,
                lambda_hat=rate,
                decision=decision,
                empirical_percentile_s=empirical,
            )
        )
        previous = decision
    return records


def save_decision_log(path, records):
    """Write the closed-loop decision log CSV.

    Columns: window_start_s, lambda_hat, multiplier, predicted_p,
    empirical_p, feasible.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["window_start_s", "lambda_hat", "multiplier", "predicted_p",
             "empirical_p", "feasible"]
        )
        for rec in records:
            w.writerow(
                [
                    repr(rec.window_start_s),
                    repr(rec.lambda_hat),
                    repr(rec.decision.multiplier),
                    repr(rec.decision.predicted_delay_s),
                    repr(rec.empirical_percentile_s),
                    int(rec.decision.feasible),
                ]
            )
