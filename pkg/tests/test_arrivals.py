"""First-alarm and inter-request laws: exact CDFs, limits, KS helpers."""

import math

import numpy as np
import pytest

from miotcore.arrivals import (
    ArrivalRates,
    ErlangMixture,
    arrival_rates,
    bearer_request_rate,
    falpha_exponential,
    falpha_q_discrete,
    falpha_system_discrete,
    fbeta_closed_form,
    fbeta_mixture,
    ks_critical_value,
    ks_distance,
    ks_report,
    save_cdf_csv,
)
from miotcore.traffic import SourcePopulation, TrafficParams, beta_pmf

SMALL = TrafficParams(period_s=10.0, slot_delta_s=0.05)  # 200 slots


def _hazard(params):
    return beta_pmf(np.arange(1, params.n_slots + 1), params)


def _brute_single_cdf(m_values, k, offset, params, forced_regular=False):
    """Direct product over slots: P(alpha <= m) = 1 - prod (1 - f)."""
    f = _hazard(params)
    n = params.n_slots
    s = (k + offset) % n
    out = []
    for m in m_values:
        start = 2 if forced_regular else 1
        surv = 1.0
        for j in range(start, m + 1):
            surv *= 1.0 - f[(s + j - 1) % n]
        out.append(1.0 - surv)
    return np.array(out)


def test_bearer_request_rate_values():
    # lambda_beta = Q (1 - e^-1) / T
    assert bearer_request_rate(10_000, 10.0) == pytest.approx(
        632.1205588285577, rel=1e-13)
    assert bearer_request_rate(15_000, 10.0) == pytest.approx(
        948.1808382428365, rel=1e-13)
    assert bearer_request_rate(100, 10.0, tx_probability=0.5) == 5.0
    with pytest.raises(ValueError):
        bearer_request_rate(0, 10.0)
    with pytest.raises(ValueError):
        bearer_request_rate(10, 0.0)


def test_falpha_q_discrete_matches_direct_product():
    m_values = [1, 2, 3, 10, 37, 80, 120, 199, 200, 350]
    for k, offset in [(0, 0), (5, 0), (0, 63), (57, 120)]:
        direct = _brute_single_cdf(m_values, k, offset, SMALL)
        fast = falpha_q_discrete(np.array(m_values), k, offset, SMALL)
        assert np.allclose(fast, direct, rtol=0.0, atol=1e-12)
        forced = falpha_q_discrete(
            np.array(m_values), k, offset, SMALL, forced_regular=True)
        direct_f = _brute_single_cdf(m_values, k, offset, SMALL,
                                     forced_regular=True)
        assert np.allclose(forced, direct_f, rtol=0.0, atol=1e-12)


def test_falpha_q_discrete_properties():
    m = np.arange(1, 3 * SMALL.n_slots)
    cdf = falpha_q_discrete(m, 17, 0, SMALL)
    assert np.all(np.diff(cdf) >= 0.0)
    assert np.all((cdf >= 0.0) & (cdf <= 1.0))
    # one expected alarm per period: three periods out the CDF is ~ 1 - e^-3
    assert cdf[-1] > 0.93
    assert falpha_q_discrete(1, 17, 0, SMALL) == pytest.approx(
        _hazard(SMALL)[18 - 1], rel=1e-12)
    with pytest.raises(ValueError):
        falpha_q_discrete(0, 0, 0, SMALL)
    with pytest.raises(ValueError):
        falpha_q_discrete(np.array([1.5]), 0, 0, SMALL)
    with pytest.raises(ValueError):
        falpha_q_discrete(1, SMALL.n_slots, 0, SMALL)


def test_forced_regular_identity_and_bound():
    # F - F_forced = f(s+1) (1 - F_forced): the forced variant only removes
    # the very first slot's hazard
    f = _hazard(SMALL)
    m = np.arange(1, 2 * SMALL.n_slots)
    for k in (0, 79, 150):
        s = k % SMALL.n_slots
        plain = falpha_q_discrete(m, k, 0, SMALL)
        forced = falpha_q_discrete(m, k, 0, SMALL, forced_regular=True)
        identity = f[(s + 1) - 1] * (1.0 - forced)
        assert np.allclose(plain - forced, identity, rtol=0.0, atol=1e-12)
        assert np.all(plain - forced >= -1e-15)
        assert np.max(plain - forced) <= 2.0 * f.max()


def test_falpha_system_matches_direct_product():
    pop = SourcePopulation(group_size=2, n_groups=2, offsets_s=(0.0, 3.7))
    m = np.array([1, 5, 20, 60, 150, 200, 400])
    offs_slots = [int(w / SMALL.slot_delta_s) % SMALL.n_slots
                  for w in pop.offsets_s]
    for k in (0, 33):
        direct_surv = np.ones(len(m))
        for off in offs_slots:
            per_src = 1.0 - _brute_single_cdf(m, k, off, SMALL)
            direct_surv *= per_src ** pop.group_size
        fast = falpha_system_discrete(m, k, pop, SMALL)
        assert np.allclose(fast, 1.0 - direct_surv, rtol=0.0, atol=1e-12)
        # the merged first alarm is no later than any single source's
        single = falpha_q_discrete(m, k, offs_slots[0], SMALL)
        assert np.all(fast >= single - 1e-15)


def test_falpha_system_transmitter_group_is_forced():
    pop = SourcePopulation(group_size=3, n_groups=2, offsets_s=(0.0, 5.0))
    m = np.arange(1, 300)
    plain = falpha_system_discrete(m, 10, pop, SMALL)
    forced = falpha_system_discrete(m, 10, pop, SMALL, transmitter_group=0)
    assert np.all(plain - forced >= -1e-15)
    assert np.max(plain - forced) <= 2.0 * _hazard(SMALL).max()
    no_offsets = SourcePopulation(group_size=3, n_groups=2)
    with pytest.raises(ValueError):
        falpha_system_discrete(m, 0, no_offsets, SMALL)


def test_arrival_rates_hand_values():
    from miotcore.traffic import beta_pdf

    rates = arrival_rates(0.0, (2.5, 5.0), 10, 10.0)
    assert rates.lambda_alpha == 1.0
    assert rates.lambda_beta == pytest.approx(
        (1.0 - math.exp(-1.0)) * 1.0, rel=1e-13)
    expect = 5 * (beta_pdf(2.5, 10.0) + beta_pdf(5.0, 10.0))
    assert rates.lambda_alpha_given_t == pytest.approx(expect, rel=1e-12)
    # clock positions wrap modulo the period
    wrapped = arrival_rates(10.0, (2.5, 5.0), 10, 10.0)
    assert wrapped.lambda_alpha_given_t == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        arrival_rates(0.0, (2.5, 5.0, 7.5), 10, 10.0)  # 10 % 3 != 0
    with pytest.raises(ValueError):
        ArrivalRates(0.0, 1.0, 1.0)


def test_falpha_exponential_form():
    tau = np.linspace(0.0, 0.05, 7)
    offs = (0.0, 1.0, 4.0, 9.0)
    got = falpha_exponential(tau, 3.0, offs, 400, 10.0)
    lam = arrival_rates(3.0, offs, 400, 10.0).lambda_alpha_given_t
    assert np.allclose(got, 1.0 - np.exp(-lam * tau), rtol=0.0, atol=1e-14)
    assert falpha_exponential(0.0, 3.0, offs, 400, 10.0) == 0.0
    with pytest.raises(ValueError):
        falpha_exponential(-0.1, 3.0, offs, 400, 10.0)


def test_erlang_mixture_weights_and_truncation():
    mix = ErlangMixture(stage_rate=1000.0)
    w = mix.weights()
    assert len(w) == 100
    p = mix.success_probability
    assert w[0] == pytest.approx(p)
    assert w[1] == pytest.approx(p * (1 - p))
    assert w.sum() == pytest.approx(1.0 - (1 - p) ** 100, rel=1e-14)
    assert mix.truncation_bound == pytest.approx((1 - p) ** 100 / p, rel=1e-12)
    assert mix.truncation_bound < 1e-40
    with pytest.raises(ValueError):
        ErlangMixture(stage_rate=0.0)
    with pytest.raises(ValueError):
        ErlangMixture(stage_rate=1.0, success_probability=1.0)
    with pytest.raises(ValueError):
        ErlangMixture(stage_rate=1.0, z_max=0)


def test_fbeta_mixture_equals_closed_form():
    # geometric thinning of Poisson alarm epochs: the Erlang mixture
    # collapses to Exp(p * lambda_alpha) exactly
    q_total, period = 10_000, 10.0
    lam_alpha = q_total / period
    mix = ErlangMixture(stage_rate=lam_alpha)
    lam_beta = bearer_request_rate(q_total, period)
    tau = np.linspace(0.0, 10.0 / lam_beta, 101)
    got = fbeta_mixture(tau, mix)
    want = fbeta_closed_form(tau, q_total, period)
    assert np.allclose(got, want, rtol=0.0, atol=1e-12)
    assert got[0] == 0.0
    assert np.all(np.diff(got) > 0.0)
    with pytest.raises(ValueError):
        fbeta_mixture(np.array([-1.0]), mix)


def test_ks_distance_exact_small_sample():
    # order statistics 1, 2, 3 against CDF x/4: the largest one-sided gap
    # is 0.25 (at the first and last points)
    d = ks_distance([1.0, 2.0, 3.0], lambda x: np.asarray(x) / 4.0)
    assert d == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        ks_distance([1.0], lambda x: x)


def test_ks_distance_discriminates():
    rng = np.random.default_rng(12)
    model = lambda x: -np.expm1(-2.0 * np.asarray(x))
    good = rng.exponential(0.5, size=5000)
    assert ks_distance(good, model) < ks_critical_value(5000, 0.01)
    lattice = np.full(5000, 0.5)  # all mass at one point
    assert ks_distance(lattice, model) > 10 * ks_critical_value(5000, 0.01)


def test_ks_critical_value_formula():
    # c(0.05) = 1.3581, c(0.01) = 1.6276 (asymptotic Kolmogorov quantiles)
    assert ks_critical_value(100, 0.05) == pytest.approx(0.13581, abs=2e-5)
    assert ks_critical_value(100, 0.01) == pytest.approx(0.16276, abs=2e-5)
    assert ks_critical_value(400, 0.05) == pytest.approx(
        ks_critical_value(100, 0.05) / 2.0, rel=1e-12)
    with pytest.raises(ValueError):
        ks_critical_value(49, 0.05)


def test_ks_report_text():
    rng = np.random.default_rng(5)
    sample = rng.exponential(1.0, size=200)
    text = ks_report(sample, lambda x: -np.expm1(-np.asarray(x)))
    assert "n: 200" in text
    assert "ks_distance:" in text
    assert "critical_01pct:" in text and "critical_05pct:" in text
    assert "pass" in text


def test_save_cdf_csv(tmp_path):
    path = tmp_path / "cdf.csv"
    save_cdf_csv(path, [0.0, 0.5], [0.0, 0.25])
    lines = path.read_text().splitlines()
    assert lines[0] == "tau_s,cdf_value"
    assert lines[1] == "0.0,0.0"
    assert lines[2] == "0.5,0.25"
    with pytest.raises(ValueError):
        save_cdf_csv(path, [0.0, 0.5], [0.0])
