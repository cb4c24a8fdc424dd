"""Inter-arrival analysis for merged bearer-request streams.

Starting from the per-source alarm hazard, this module evaluates the
exact conditional CDF of the time to the next request (per source and
for the merged system), its large-population exponential limit, and the
Erlang-mixture form of the inter-request distribution, plus
Kolmogorov-Smirnov tooling to compare models against sampled gaps.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .traffic import TX_PROBABILITY_DEFAULT, TrafficParams, beta_pdf
from .traffic import _prefix as _cumulative_hazard

# asymptotic two-sided KS critical values need a healthy sample
_KS_MIN_N = 50


@dataclass(frozen=True)
class ConditionalAlphaCdf:
    """CDF of the first-alarm lag, conditioned on a reference slot.

    Values are indexed by `lags` (slots since the reference transmission);
    they must start at 0 for lag 0 and be non-decreasing within [0, 1].
    """

    reference_slot: int
    offsets_slots: tuple
    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags)
        vals = np.asarray(self.values)
        if lags.shape != vals.shape:
            raise ValueError("lags and values must align")
        if len(lags) and lags[0] == 0 and vals[0] != 0.0:
            raise ValueError("CDF must be 0 at lag 0")
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise ValueError("CDF values must lie in [0, 1]")
        if np.any(np.diff(vals) < 0.0):
            raise ValueError("CDF must be non-decreasing")


@dataclass(frozen=True)
class ArrivalRates:
    """Alarm and request rates of a population of Q sources.

    lambda_alpha is the offset-averaged alarm rate Q/T; given the clock
    position t it sharpens to lambda_alpha_given_t = sum_q f(s_q(t, w_q));
    thinning by the transmission probability gives lambda_beta.
    """

    lambda_alpha: float
    lambda_alpha_given_t: float
    lambda_beta: float

    def __post_init__(self):
        if min(self.lambda_alpha, self.lambda_beta) <= 0.0:
            raise ValueError("rates must be positive")
        if self.lambda_alpha_given_t < 0.0:
            raise ValueError("conditional rate must be >= 0")


@dataclass(frozen=True)
class ErlangMixture:
    """Geometric mixture of Erlang stages for the inter-request time.

    A request happens on an alarm with probability success_probability,
    so the number of alarm epochs between two requests is geometric and
    the inter-request time is an Erlang(z, stage_rate) mixture truncated
    at z_max stages.
    """

    stage_rate: float
    success_probability: float = TX_PROBABILITY_DEFAULT
    z_max: int = 100

    def __post_init__(self):
        if self.stage_rate <= 0.0:
            raise ValueError("stage_rate must be positive")
        if not 0.0 < self.success_probability < 1.0:
            raise ValueError("success_probability must be in (0, 1)")
        if self.z_max < 1:
            raise ValueError("z_max must be >= 1")

    def weights(self) -> np.ndarray:
        """P(z stages) = p*(1-p)^(z-1) for z = 1..z_max."""
        z = np.arange(1, self.z_max + 1)
        p = self.success_probability
        return p * (1.0 - p) ** (z - 1)

    @property
    def truncation_bound(self) -> float:
        """Upper bound on the CDF mass ignored beyond z_max stages."""
        p = self.success_probability
        return (1.0 - p) ** self.z_max / p


def bearer_request_rate(q_total, period_s,
                        tx_probability=TX_PROBABILITY_DEFAULT) -> float:
    """Merged request rate lambda_beta = Q * tx_probability / T."""
    if q_total < 1 or period_s <= 0.0:
        raise ValueError("need q_total >= 1 and period_s > 0")
    return q_total * tx_probability / period_s


def _offsets_in_slots(offsets_s, params: TrafficParams) -> np.ndarray:
    off = np.asarray(offsets_s, dtype=np.float64)
    return (off / params.slot_delta_s).astype(np.int64) % params.n_slots


def _as_lags(m) -> np.ndarray:
    m_arr = np.asarray(m)
    if not np.issubdtype(m_arr.dtype, np.integer):
        raise ValueError("lag m must be integer slots")
    if np.any(m_arr < 1):
        raise ValueError("lag m must be >= 1")
    return m_arr.astype(np.int64)


def _survival_exponent(m, start_slot, params: TrafficParams):
    """Cumulative hazard over slots start+1 .. start+m (wrapping)."""
    prefix, phi = _cumulative_hazard(params)
    n = params.n_slots
    y = np.asarray(m, dtype=np.int64) + int(start_slot)
    a_end = (y // n) * phi + prefix[y % n]
    a_start = (start_slot // n) * phi + prefix[start_slot % n]
    return a_end - a_start


def falpha_q_discrete(m, k, offset, params: TrafficParams,
                      forced_regular=False):
    """Exact CDF of the first-alarm lag for one source.

    P(alpha_q <= m) = 1 - prod_{j=1..m} (1 - f(mod(s+j, N))) with
    s = mod(k + offset, N); evaluated through the cumulative hazard so
    grids of m cost one lookup each.  With forced_regular=True the slot
    right after the transmission cannot alarm and the product starts at
    j = 2.
    """
    m_arr = _as_lags(m)
    if not 0 <= k < params.n_slots:
        raise ValueError(f"slot k out of [0, {params.n_slots})")
    s = (int(k) + int(offset)) % params.n_slots
    if forced_regular:
        expo = _survival_exponent(m_arr - 1, s + 1, params)
    else:
        expo = _survival_exponent(m_arr, s, params)
    out = -np.expm1(-expo)
    return float(out) if np.ndim(m) == 0 else out


def falpha_system_discrete(m, k, population, params: TrafficParams,
                           transmitter_group=None):
    """Exact CDF of the merged first-alarm lag across all Q sources.

    Combines per-source survivals through the minimum identity
    1 - prod_q (1 - F_q(m | s_q(k, w_q))); sources of a group share an
    offset so each group contributes its survival to the group_size
    power.  If transmitter_group is given, one source of that group is
    treated as the transmitter whose next slot is forced Regular.
    """
    if population.offsets_s is None:
        raise ValueError("population must carry explicit offsets")
    m_arr = _as_lags(m)
    if not 0 <= k < params.n_slots:
        raise ValueError(f"slot k out of [0, {params.n_slots})")
    offs = _offsets_in_slots(population.offsets_s, params)
    total = np.zeros(m_arr.shape, dtype=np.float64)
    for g, off in enumerate(offs):
        s = (int(k) + int(off)) % params.n_slots
        expo = _survival_exponent(m_arr, s, params)
        count = population.group_size
        if transmitter_group is not None and g == transmitter_group:
            forced = _survival_exponent(m_arr - 1, s + 1, params)
            total = total + forced + (count - 1) * expo
        else:
            total = total + count * expo
    out = -np.expm1(-total)
    return float(out) if np.ndim(m) == 0 else out


def arrival_rates(t, offsets_s, q_total, period_s,
                  tx_probability=TX_PROBABILITY_DEFAULT) -> ArrivalRates:
    """Alarm rates of the population at clock time t.

    lambda_alpha = Q/T; lambda_alpha_given_t = sum_q f(mod(t + w_q, T));
    lambda_beta = tx_probability * lambda_alpha.
    """
    offs = np.asarray(offsets_s, dtype=np.float64)
    if q_total % len(offs) != 0:
        raise ValueError("offsets must divide the population evenly")
    per_offset = q_total // len(offs)
    positions = np.mod(t + offs, period_s)
    lam_t = per_offset * float(np.sum(beta_pdf(positions, period_s)))
    lam_alpha = q_total / period_s
    return ArrivalRates(lam_alpha, lam_t, tx_probability * lam_alpha)


def falpha_exponential(tau, t, offsets_s, q_total, period_s):
    """Exponential-limit CDF 1 - exp(-lambda_{alpha|t} * tau).

    The rate is the instantaneous population alarm rate at clock time t,
    sum_q f(mod(t + w_q, T)).
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0.0):
        raise ValueError("tau must be >= 0")
    rates = arrival_rates(t, offsets_s, q_total, period_s)
    out = -np.expm1(-rates.lambda_alpha_given_t * tau_arr)
    return float(out) if np.ndim(tau) == 0 else out


def fbeta_mixture(tau, mix: ErlangMixture):
    """Erlang-mixture CDF of the inter-request time.

    sum_{z=1..z_max} ErlangCDF(z, stage_rate)(tau) * p * (1-p)^(z-1);
    the mass ignored beyond z_max is bounded by mix.truncation_bound.
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0.0):
        raise ValueError("tau must be >= 0")
    z = np.arange(1, mix.z_max + 1, dtype=np.float64)
    stage_cdf = special.gammainc(z[:, None],
                                 mix.stage_rate * tau_arr.reshape(1, -1))
    out = (mix.weights() @ stage_cdf).reshape(tau_arr.shape)
    return float(out) if np.ndim(tau) == 0 else out


def fbeta_closed_form(tau, q_total, period_s):
    """Closed-form inter-request CDF 1 - exp(-lambda_beta * tau).

    lambda_beta = Q * (1 - e^-1) / T, the thinned offset-averaged alarm
    rate; exact in the independent-offset large-Q limit.
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0.0):
        raise ValueError("tau must be >= 0")
    lam = bearer_request_rate(q_total, period_s)
    out = -np.expm1(-lam * tau_arr)
    return float(out) if np.ndim(tau) == 0 else out


def ks_distance(samples, model_cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance of samples vs a model CDF.

    sup over the sample points of |empirical CDF - model CDF|, using
    both one-sided parts at each order statistic.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need >= 2 samples")
    return float(stats.kstest(arr, model_cdf).statistic)


def ks_critical_value(n, significance) -> float:
    """Asymptotic two-sided KS critical value c(significance)/sqrt(n)."""
    if n < _KS_MIN_N:
        raise ValueError(f"KS significance needs n >= {_KS_MIN_N}, got {n}")
    return float(special.kolmogi(significance)) / math.sqrt(n)


def ks_report(samples, model_cdf) -> str:
    """Structured text: statistic, n, and 1%/5% critical values."""
    arr = np.asarray(samples, dtype=np.float64)
    d = ks_distance(arr, model_cdf)
    lines = [f"n: {arr.size}", f"ks_distance: {d:.6f}"]
    for sig in (0.01, 0.05):
        crit = ks_critical_value(arr.size, sig)
        verdict = "pass" if d <= crit else "fail"
        lines.append(f"critical_{int(sig * 100):02d}pct: {crit:.6f} ({verdict})")
    return "\n".join(lines)


def save_cdf_csv(path, tau_grid, values):
    """Write a CDF evaluation as CSV with header tau_s,cdf_value."""
    tau_arr = np.asarray(tau_grid, dtype=np.float64)
    val_arr = np.asarray(values, dtype=np.float64)
    if tau_arr.shape != val_arr.shape:
        raise ValueError("grid and values must align")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_s", "cdf_value"])
        for t, v in zip(tau_arr, val_arr):
            w.writerow([repr(float(t)), repr(float(v))])
