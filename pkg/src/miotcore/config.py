"""YAML scenario configuration shared by the CLI, simulator, and tests.

A scenario file is a nested key/value document with four optional blocks
(``traffic`` is the only one with required fields):

    traffic:
      period_s: 10.0            # required
      q_total: 10000            # required
      n_groups: 100
      slot_delta_s: 1.0e-5
      alarm_rate_lambda: 1.0
      regular_rate_epsilon: 0.0
      tx_probability: null      # default 1 - exp(-alarm_rate_lambda)
      offsets_s: null           # fixed per-group offsets; default Uniform[0, T)
      horizon_s: 1000.0         # default 100 * period_s
    entities:
      capacity_scale: 1.0
      profiles:                 # default: the six-entity EPC profile below
        - {entity: MME, ops_per_bearer: 9.0, capacity: 10000.0, messages_per_bearer: 9}
    topology:
      n_enb: null               # default: one eNB per source group
      n_sgw: 1
      link_latency_s: 0.0
      encryption_ops: 0.0
    scaling:
      target_delay_s: 0.1
      percentile: 0.99
      multipliers: [1.0, 2.0, 2.5]
      hysteresis: 0.1
      scope: all                # or "mme"
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from .arrivals import bearer_request_rate
from .autoscale import ScalingPolicy
from .delay import ENTITY_MME, EntityProfile
from .errors import ConfigurationError
from .traffic import SourcePopulation, TrafficParams

DEFAULT_ENTITY_PROFILES = (
    EntityProfile("UE", 3.0, 1000.0, 3),
    EntityProfile("eNB", 2.0, 1000.0, 2),
    EntityProfile("MME", 9.0, 10000.0, 9),
    EntityProfile("HSS", 1.0, 10000.0, 1),
    EntityProfile("SGW", 3.0, 10000.0, 3),
    EntityProfile("PGW", 1.0, 10000.0, 1),
)
DEFAULT_N_GROUPS = 100

_SCALE_SCOPES = {"all": None, "mme": frozenset({ENTITY_MME})}


@dataclass(frozen=True)
class Scenario:
    """Fully resolved scenario: traffic, entity profiles, topology, scaling."""

    params: TrafficParams
    q_total: int
    n_groups: int
    offsets_s: Optional[tuple]
    horizon_s: float
    profiles: tuple
    n_enb: Optional[int]
    n_sgw: int
    link_latency_s: float
    encryption_ops: float
    policy: ScalingPolicy

    @property
    def group_size(self):
        return self.q_total // self.n_groups

    @property
    def effective_n_enb(self):
        return self.n_enb if self.n_enb is not None else self.n_groups

    def lambda_beta(self):
        """Merged bearer-request rate Q * tx_probability / T."""
        return bearer_request_rate(
            self.q_total, self.params.period_s, self.params.tx_probability
        )

    def population(self, rng):
        """Source population with per-group offsets (sampled if not fixed).

        Offsets default to i.i.d. Uniform[0, T) per group, drawn from
        ``rng``; a scenario with fixed ``offsets_s`` ignores the rng.
        """
        if self.offsets_s is not None:
            offsets = self.offsets_s
        else:
            offsets = tuple(
                float(x) for x in rng.uniform(0.0, self.params.period_s, self.n_groups)
            )
        return SourcePopulation(
            group_size=self.group_size,
            n_groups=self.n_groups,
            offsets_s=offsets,
        )


def _block(doc, name):
    block = doc.get(name, {})
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigurationError(f"{name}: must be a mapping")
    return dict(block)


def _take(block, field, path, default=None, required=False, convert=None):
    value = block.pop(field, None)
    if value is None:
        if required:
            raise ConfigurationError(f"{path}.{field}: required")
        return default
    if convert is None:
        return value
    try:
        return convert(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}.{field}: {exc}") from exc


def _reject_unknown(block, path):
    if block:
        fields = ", ".join(map(str, sorted(block, key=str)))
        raise ConfigurationError(f"{path}: unknown field(s) {fields}")


def _int_strict(value):
    out = int(value)
    if isinstance(value, float) and value != out:
        raise ValueError(f"expected an integer, got {value!r}")
    return out


def scenario_from_dict(doc):
    """Build a validated Scenario from a parsed configuration mapping."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration root must be a mapping")
    unknown = set(doc) - {"traffic", "entities", "topology", "scaling"}
    if unknown:
        raise ConfigurationError(f"unknown top-level block(s): {', '.join(sorted(unknown))}")

    tr = _block(doc, "traffic")
    period_s = _take(tr, "period_s", "traffic", required=True, convert=float)
    q_total = _take(tr, "q_total", "traffic", required=True, convert=_int_strict)
    n_groups = _take(tr, "n_groups", "traffic", default=DEFAULT_N_GROUPS, convert=_int_strict)
    slot_delta_s = _take(tr, "slot_delta_s", "traffic", default=1e-5, convert=float)
    alarm_rate = _take(tr, "alarm_rate_lambda", "traffic", default=1.0, convert=float)
    epsilon = _take(tr, "regular_rate_epsilon", "traffic", default=0.0, convert=float)
    tx_probability = _take(tr, "tx_probability", "traffic", convert=float)
    offsets = _take(tr, "offsets_s", "traffic")
    horizon_s = _take(tr, "horizon_s", "traffic", default=100.0 * period_s, convert=float)
    _reject_unknown(tr, "traffic")

    try:
        params = TrafficParams(
            period_s=period_s,
            slot_delta_s=slot_delta_s,
            alarm_rate_lambda=alarm_rate,
            regular_rate_epsilon=epsilon,
            tx_probability=tx_probability,
        )
    except ValueError as exc:
        raise ConfigurationError(f"traffic: {exc}") from exc
    if q_total < 1:
        raise ConfigurationError("traffic.q_total: must be >= 1")
    if n_groups < 1:
        raise ConfigurationError("traffic.n_groups: must be >= 1")
    if q_total % n_groups:
        raise ConfigurationError(
            f"traffic.q_total: {q_total} is not divisible by n_groups={n_groups}"
        )
    if offsets is not None:
        try:
            offsets = tuple(float(x) for x in offsets)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"traffic.offsets_s: {exc}") from exc
        if len(offsets) != n_groups:
            raise ConfigurationError(
                f"traffic.offsets_s: need one offset per group "
                f"({len(offsets)} given, n_groups={n_groups})"
            )
    if not horizon_s > 0.0:
        raise ConfigurationError("traffic.horizon_s: must be positive")

    en = _block(doc, "entities")
    capacity_scale = _take(en, "capacity_scale", "entities", default=1.0, convert=float)
    if not capacity_scale > 0.0:
        raise ConfigurationError("entities.capacity_scale: must be positive")
    raw_profiles = _take(en, "profiles", "entities")
    _reject_unknown(en, "entities")
    if raw_profiles is None:
        profiles = DEFAULT_ENTITY_PROFILES
    else:
        if not isinstance(raw_profiles, list) or not raw_profiles:
            raise ConfigurationError("entities.profiles: must be a non-empty list")
        profiles = []
        for i, row in enumerate(raw_profiles):
            if not isinstance(row, dict):
                raise ConfigurationError(f"entities.profiles[{i}]: must be a mapping")
            row = dict(row)
            path = f"entities.profiles[{i}]"
            entity = _take(row, "entity", path, required=True, convert=str)
            ops = _take(row, "ops_per_bearer", path, required=True, convert=float)
            cap = _take(row, "capacity", path, required=True, convert=float)
            msgs = _take(row, "messages_per_bearer", path, default=1, convert=_int_strict)
            _reject_unknown(row, path)
            try:
                profiles.append(EntityProfile(entity, ops, cap, msgs))
            except ConfigurationError as exc:
                raise ConfigurationError(f"{path}: {exc}") from exc
        profiles = tuple(profiles)
    if capacity_scale != 1.0:
        profiles = tuple(
            EntityProfile(
                p.entity, p.ops_per_bearer, p.capacity * capacity_scale,
                p.messages_per_bearer,
            )
            for p in profiles
        )

    topo = _block(doc, "topology")
    n_enb = _take(topo, "n_enb", "topology", convert=_int_strict)
    n_sgw = _take(topo, "n_sgw", "topology", default=1, convert=_int_strict)
    link_latency_s = _take(topo, "link_latency_s", "topology", default=0.0, convert=float)
    encryption_ops = _take(topo, "encryption_ops", "topology", default=0.0, convert=float)
    _reject_unknown(topo, "topology")
    if n_enb is not None and n_enb < 1:
        raise ConfigurationError("topology.n_enb: must be >= 1")
    if n_sgw < 1:
        raise ConfigurationError("topology.n_sgw: must be >= 1")
    if link_latency_s < 0.0:
        raise ConfigurationError("topology.link_latency_s: must be >= 0")
    if encryption_ops < 0.0:
        raise ConfigurationError("topology.encryption_ops: must be >= 0")

    sc = _block(doc, "scaling")
    target = _take(sc, "target_delay_s", "scaling", default=0.1, convert=float)
    percentile = _take(sc, "percentile", "scaling", default=0.99, convert=float)
    multipliers = _take(sc, "multipliers", "scaling", default=(1.0, 2.0, 2.5))
    hysteresis = _take(sc, "hysteresis", "scaling", default=0.1, convert=float)
    scope = _take(sc, "scope", "scaling", default="all", convert=str)
    _reject_unknown(sc, "scaling")
    if scope not in _SCALE_SCOPES:
        raise ConfigurationError(
            f"scaling.scope: must be one of {sorted(_SCALE_SCOPES)}, got {scope!r}"
        )
    try:
        multipliers = tuple(float(m) for m in multipliers)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"scaling.multipliers: {exc}") from exc
    policy = ScalingPolicy(
        target_delay_s=target,
        percentile=percentile,
        multipliers=multipliers,
        hysteresis=hysteresis,
        scale_entities=_SCALE_SCOPES[scope],
    )

    return Scenario(
        params=params,
        q_total=q_total,
        n_groups=n_groups,
        offsets_s=offsets,
        horizon_s=horizon_s,
        profiles=profiles,
        n_enb=n_enb,
        n_sgw=n_sgw,
        link_latency_s=link_latency_s,
        encryption_ops=encryption_ops,
        policy=policy,
    )


def load_scenario(path):
    """Parse and validate a YAML scenario file."""
    try:
        with open(path, "r") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path!r} is not valid YAML: {exc}") from exc
    return scenario_from_dict(doc)


def scenario_to_dict(scenario):
    """Plain-dict form of a resolved scenario (manifest serialization)."""
    return {
        "traffic": {
            "period_s": scenario.params.period_s,
            "q_total": scenario.q_total,
            "n_groups": scenario.n_groups,
            "slot_delta_s": scenario.params.slot_delta_s,
            "alarm_rate_lambda": scenario.params.alarm_rate_lambda,
            "regular_rate_epsilon": scenario.params.regular_rate_epsilon,
            "tx_probability": scenario.params.tx_probability,
            "offsets_s": list(scenario.offsets_s) if scenario.offsets_s else None,
            "horizon_s": scenario.horizon_s,
        },
        "entities": {
            "profiles": [
                {
                    "entity": p.entity,
                    "ops_per_bearer": p.ops_per_bearer,
                    "capacity": p.capacity,
                    "messages_per_bearer": p.messages_per_bearer,
                }
                for p in scenario.profiles
            ],
        },
        "topology": {
            "n_enb": scenario.n_enb,
            "n_sgw": scenario.n_sgw,
            "link_latency_s": scenario.link_latency_s,
            "encryption_ops": scenario.encryption_ops,
        },
        "scaling": {
            "target_delay_s": scenario.policy.target_delay_s,
            "percentile": scenario.policy.percentile,
            "multipliers": list(scenario.policy.multipliers),
            "hysteresis": scenario.policy.hysteresis,
            "scope": "all" if scenario.policy.scale_entities is None else "mme",
        },
    }
