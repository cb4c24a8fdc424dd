"""Analytical delay model for bearer instantiation.

The MME serves one deterministic job per bearer request under egalitarian
processor sharing, so its sojourn tail is exponential, P(v > tau) ~
psi * exp(-gamma * tau); every other entity contributes a constant delay
K.  The tail exponent gamma is obtained from the queue itself: in virtual
time the companions of a job form a self-exciting cluster whose moment
generating function stays finite exactly up to the decay exponent, and
that criticality is located by a backward march plus bisection.
"""

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError, OverloadError

ENTITY_MME = "MME"
ENTITY_NAMES = ("UE", "eNB", "MME", "HSS", "SGW", "PGW")

_BISECT_REL_TOL = 1e-10
_BISECT_MAX_ITER = 200

# backward-march discretization: grid points per service time, domain cap
# for the marched value, and bisection steps on the exponent
_MARCH_GRID = 500
_MARCH_CAP = 50.0
_MARCH_BISECTIONS = 46


@dataclass(frozen=True)
class EntityProfile:
    """Per-bearer work and capacity of one EPC entity.

    ops_per_bearer and capacity share units (messages or CPU operations);
    their ratio is the entity's per-bearer delay in seconds.
    messages_per_bearer is the per-message split used by the simulator.
    """

    entity: str
    ops_per_bearer: float
    capacity: float
    messages_per_bearer: int = 1

    def __post_init__(self):
        if self.ops_per_bearer <= 0.0:
            raise ConfigurationError(f"{self.entity}: ops_per_bearer must be > 0")
        if self.capacity <= 0.0:
            raise ConfigurationError(f"{self.entity}: capacity must be > 0")
        if self.messages_per_bearer < 1:
            raise ConfigurationError(
                f"{self.entity}: messages_per_bearer must be >= 1")

    @property
    def per_bearer_delay(self) -> float:
        return self.ops_per_bearer / self.capacity


@dataclass(frozen=True)
class DelayModelParams:
    """Fitted tail model P(d > tau) = psi * exp(-gamma * (tau - K)).

    D is the deterministic MME service time, rho = lambda_beta * D the
    MME load; K the constant non-MME delay.  The approximation is valid
    for tau >= K + tau0 with tau0 = max(0, ln(psi)/gamma).
    """

    D: float
    rho: float
    psi: float
    gamma: float
    K: float

    def __post_init__(self):
        if self.D <= 0.0:
            raise ValueError("D must be positive")
        if not 0.0 < self.rho < 1.0:
            raise OverloadError(
                f"rho={self.rho:.6g} outside (0, 1)",
                min_capacity_multiplier=self.rho if self.rho >= 1.0 else None)
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.psi <= 0.0:
            raise ValueError("psi must be positive")
        if self.K < 0.0:
            raise ValueError("K must be >= 0")

    @property
    def tau0(self) -> float:
        """Validity threshold of the MME sojourn tail, seconds."""
        return max(0.0, math.log(self.psi) / self.gamma)

    @property
    def validity_threshold(self) -> float:
        """Smallest total delay tau the survival model may be queried at."""
        return self.K + self.tau0

    def summary(self) -> str:
        return "\n".join([
            f"D_s: {self.D!r}",
            f"rho: {self.rho!r}",
            f"psi: {self.psi!r}",
            f"gamma_per_s: {self.gamma!r}",
            f"K_s: {self.K!r}",
            f"tau0_s: {self.tau0!r}",
        ])


# entities that serve the full aggregated request stream; UE and eNB see
# only per-device and per-group shares, so their per-bearer delay may
# exceed the MME's without ever building a queue
_SHARED_CORE = ("HSS", "SGW", "PGW")


def check_mme_dominance(profiles) -> bool:
    """Warn unless the MME has the largest O_X/C_X among shared entities."""
    by_name = _profiles_by_name(profiles)
    if ENTITY_MME not in by_name:
        raise ConfigurationError("profiles must include the MME")
    d_mme = by_name[ENTITY_MME].per_bearer_delay
    slower = [n for n in _SHARED_CORE
              if n in by_name and by_name[n].per_bearer_delay > d_mme]
    if slower:
        warnings.warn(
            f"MME is not the bottleneck: {', '.join(sorted(slower))} have a "
            f"larger per-bearer delay; the single-queue tail model degrades",
            stacklevel=2)
    return not slower


def _profiles_by_name(profiles) -> dict:
    by_name = {}
    for p in profiles:
        if p.entity in by_name:
            raise ConfigurationError(f"duplicate profile for {p.entity}")
        by_name[p.entity] = p
    return by_name


def constant_delay_K(profiles) -> float:
    """Constant non-MME delay K = sum over X != MME of O_X / C_X."""
    by_name = _profiles_by_name(profiles)
    missing = [n for n in ENTITY_NAMES
               if n != ENTITY_MME and n not in by_name]
    if missing:
        raise ConfigurationError(f"missing entity profiles: {', '.join(missing)}")
    return sum(p.per_bearer_delay for n, p in by_name.items()
               if n != ENTITY_MME)


def mme_load(lambda_beta, profile_mme: EntityProfile):
    """MME service time and load: D = O_MME/C_MME, rho = lambda_beta * D."""
    if lambda_beta <= 0.0:
        raise ValueError("lambda_beta must be positive")
    if profile_mme.entity != ENTITY_MME:
        raise ConfigurationError(f"expected an MME profile, got {profile_mme.entity}")
    d_service = profile_mme.per_bearer_delay
    rho = lambda_beta * d_service
    if rho >= 1.0:
        raise OverloadError(
            f"MME overloaded: rho={rho:.6g} >= 1 at lambda_beta={lambda_beta:.6g}, "
            f"D={d_service:.6g}; any capacity multiplier > {rho:.6g} restores "
            f"stability", min_capacity_multiplier=rho)
    return d_service, rho


def _stable_branch_root(rho) -> float:
    """Positive root of c = rho * (e^c - 1), the left-tail mode scale."""
    lo, hi = 1e-12, 700.0
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if mid - rho * math.expm1(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _march_decays(rho, s, per_d, n_periods, cap, thresh) -> bool:
    """March zeta(u) = s*c(u) + rho*Int_u^{u+1}(e^zeta - 1) right to left.

    Units of the service time: the window hat is c(u) = (1-|u|)+ and
    zeta = 0 for u >= 1.  Returns True when the marched solution decays
    toward 0 on the left tail instead of being attracted to the spurious
    constant branch (or blowing up), i.e. when s is below critical.
    """
    expm1 = math.expm1
    du = 1.0 / per_d
    n = (n_periods + 1) * per_d + 1
    kap = rho * du / 2.0
    rho_du = rho * du
    g = [0.0] * n
    suf = [0.0] * n
    z = 0.0
    for i in range(1, n):
        u = 1.0 - i * du
        c = 1.0 - (u if u >= 0.0 else -u)
        if c < 0.0:
            c = 0.0
        lo_idx = i - per_d
        if lo_idx >= 1:
            ssum = suf[i - 1] - suf[lo_idx - 1]
            far = g[lo_idx]
        else:
            ssum = suf[i - 1]
            far = 0.0
        a = s * c + rho_du * (ssum - 0.5 * far)
        if a > cap:
            return False
        z = a + kap * expm1(a)
        if z > cap:
            return False
        z = a + kap * expm1(z)
        if z > cap:
            return False
        z = a + kap * expm1(z)
        if z > cap:
            return False
        gi = expm1(z)
        g[i] = gi
        suf[i] = suf[i - 1] + gi
    return z < thresh


@functools.lru_cache(maxsize=256)
def criticality_exponent(rho, grid_per_service=_MARCH_GRID) -> float:
    """Dimensionless sojourn-tail decay exponent g(rho) of the M/D/1-PS queue.

    gamma = g(rho) / D.  In virtual time the jobs sharing the server with
    a tagged job form a self-exciting cluster with box kernel rho*1[0,1];
    the tagged sojourn is 1 + sum of window overlaps c(p) = (1-|p|)+ over
    cluster points p, and its exponential moment generating function is
    finite exactly for s below the blow-up point of the fixed point
    zeta(u) = s*c(u) + rho*Int_u^{u+1}(e^zeta(w) - 1) dw.  That critical
    s is located by bisection on a backward march of the fixed point.
    """
    if not 0.0 < rho < 1.0:
        raise OverloadError(f"rho={rho:.6g} outside (0, 1)",
                            min_capacity_multiplier=rho if rho >= 1 else None)
    branch = _stable_branch_root(rho)
    thresh = 0.5 * min(branch, _MARCH_CAP)
    n_periods = max(32, int(math.ceil(16.0 / branch)))
    lo, hi = 1e-6, max(8.0, 2.0 * -math.log(rho))
    if not _march_decays(rho, lo, grid_per_service, n_periods, _MARCH_CAP, thresh):
        raise NumericalError(f"march diverges at s={lo} for rho={rho}")
    if _march_decays(rho, hi, grid_per_service, n_periods, _MARCH_CAP, thresh):
        raise NumericalError(f"march decays at s={hi} for rho={rho}")
    for _ in range(_MARCH_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if _march_decays(rho, mid, grid_per_service, n_periods, _MARCH_CAP, thresh):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sojourn_tail_characteristic(gamma, lambda_beta, D) -> float:
    """Default characteristic function chi(gamma) = gamma*D - g(rho).

    Its unique positive root is the M/D/1-PS sojourn-tail decay rate with
    g(rho) the first-principles criticality exponent; swap this callable
    out in solve_gamma to use a different tail equation.
    """
    return gamma * D - criticality_exponent(lambda_beta * D)


def solve_gamma(lambda_beta, D, characteristic=None) -> float:
    """Tail decay rate gamma: the positive root of the characteristic.

    Bracketed bisection to relative tolerance 1e-10; the bracket is grown
    geometrically from [~0, 2/D] until the characteristic changes sign.
    """
    if D <= 0.0:
        raise ValueError("D must be positive")
    rho = lambda_beta * D
    if rho >= 1.0:
        raise OverloadError(
            f"rho={rho:.6g} >= 1; any capacity multiplier > {rho:.6g} "
            f"restores stability", min_capacity_multiplier=rho)
    if rho <= 0.0:
        raise ValueError("lambda_beta must be positive")
    chi = characteristic if characteristic is not None else \
        sojourn_tail_characteristic
    lo = 1e-9 / D
    hi = 2.0 / D
    chi_lo = chi(lo, lambda_beta, D)
    chi_hi = chi(hi, lambda_beta, D)
    grow = 0
    while chi_lo * chi_hi > 0.0 and grow < 64:
        hi *= 2.0
        chi_hi = chi(hi, lambda_beta, D)
        grow += 1
    if chi_lo * chi_hi > 0.0:
        raise NumericalError(
            f"no sign change: chi({lo:.6g})={chi_lo:.6g}, "
            f"chi({hi:.6g})={chi_hi:.6g} (lambda_beta={lambda_beta:.6g}, "
            f"D={D:.6g})")
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if hi - lo <= _BISECT_REL_TOL * mid:
            break
        if chi(mid, lambda_beta, D) * chi_lo <= 0.0:
            hi = mid
        else:
            lo = mid
            chi_lo = chi(lo, lambda_beta, D)
    return 0.5 * (lo + hi)


def psi_coefficient(lambda_beta, rho, gamma) -> float:
    """Tail prefactor psi = (1-rho)(lambda_beta-gamma) / (2 lambda_beta (1-rho) - gamma rho (2-rho))."""
    if not 0.0 < rho < 1.0:
        raise OverloadError(f"rho={rho:.6g} outside (0, 1)",
                            min_capacity_multiplier=rho if rho >= 1 else None)
    num = (1.0 - rho) * (lambda_beta - gamma)
    den = 2.0 * lambda_beta * (1.0 - rho) - gamma * rho * (2.0 - rho)
    scale = 2.0 * lambda_beta * (1.0 - rho) + abs(gamma * rho * (2.0 - rho))
    if abs(den) < 1e-12 * scale:
        raise NumericalError(
            f"psi denominator vanishes (lambda_beta={lambda_beta:.6g}, "
            f"rho={rho:.6g}, gamma={gamma:.6g})")
    return num / den


def build_delay_model(lambda_beta, profiles, characteristic=None) -> DelayModelParams:
    """Assemble DelayModelParams from a rate and entity profiles.

    gamma crosses lambda_beta at rho = 2 - sqrt(2), where the psi
    numerator and denominator vanish together; at that removable point
    psi is evaluated by averaging the two sides.
    """
    by_name = _profiles_by_name(profiles)
    if ENTITY_MME not in by_name:
        raise ConfigurationError("profiles must include the MME")
    check_mme_dominance(profiles)
    d_service, rho = mme_load(lambda_beta, by_name[ENTITY_MME])
    k_const = constant_delay_K(profiles)
    gamma = solve_gamma(lambda_beta, d_service, characteristic)
    # near the gamma = lambda_beta crossing the psi numerator and
    # denominator vanish together; the raw ratio is ill-conditioned there,
    # so psi is taken as the average of two clean nearby evaluations
    if abs(rho - gamma * d_service) < 1e-3:
        psi = 0.5 * (_psi_nearby(rho - 2e-3, d_service, characteristic)
                     + _psi_nearby(rho + 2e-3, d_service, characteristic))
    else:
        try:
            psi = psi_coefficient(lambda_beta, rho, gamma)
        except NumericalError:
            psi = 0.5 * (_psi_nearby(rho - 2e-3, d_service, characteristic)
                         + _psi_nearby(rho + 2e-3, d_service, characteristic))
    return DelayModelParams(D=d_service, rho=rho, psi=psi, gamma=gamma, K=k_const)


def _psi_nearby(rho, D, characteristic) -> float:
    lam = rho / D
    return psi_coefficient(lam, rho, solve_gamma(lam, D, characteristic))


def delay_survival(tau, params: DelayModelParams):
    """P(total delay > tau) = psi * exp(-gamma * (tau - K)).

    Valid for tau >= K + tau0; below that threshold the survival is
    clamped to 1 and a warning is issued.
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0.0):
        raise ValueError("tau must be >= 0")
    raw = params.psi * np.exp(-params.gamma * (tau_arr - params.K))
    below = tau_arr < params.validity_threshold
    if np.any(below):
        warnings.warn(
            f"survival clamped to 1 below the validity threshold "
            f"{params.validity_threshold:.6g} s", stacklevel=2)
    out = np.where(below, 1.0, np.minimum(raw, 1.0))
    return float(out) if np.ndim(tau) == 0 else out


def delay_percentile(p, params: DelayModelParams) -> float:
    """tau_p = K + (ln psi - ln(1-p)) / gamma, the inverse of delay_survival."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if params.psi < 1.0 and p < 1.0 - params.psi:
        raise ValueError(
            f"p={p:.6g} lies below the tail validity region (needs p >= "
            f"{1.0 - params.psi:.6g}); use the simulator for bulk percentiles")
    return params.K + (math.log(params.psi) - math.log1p(-p)) / params.gamma


def save_survival_csv(path, params: DelayModelParams, tau_grid):
    """Write the survival curve as CSV with header tau_s,survival."""
    import csv

    tau_arr = np.asarray(tau_grid, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals = delay_survival(tau_arr, params)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_s", "survival"])
        for t, v in zip(tau_arr, np.atleast_1d(vals)):
            w.writerow([repr(float(t)), repr(float(v))])
