"""Scenario configuration: defaults, field-level validation, round trips."""

import numpy as np
import pytest
import yaml

from miotcore.config import (
    DEFAULT_ENTITY_PROFILES,
    DEFAULT_N_GROUPS,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from miotcore.errors import ConfigurationError

MINIMAL = {"traffic": {"period_s": 10.0, "q_total": 1000}}


def test_minimal_document_fills_defaults():
    sc = scenario_from_dict(MINIMAL)
    assert sc.params.period_s == 10.0
    assert sc.q_total == 1000
    assert sc.n_groups == DEFAULT_N_GROUPS
    assert sc.group_size == 10
    assert sc.offsets_s is None
    assert sc.horizon_s == 1000.0
    assert sc.profiles == DEFAULT_ENTITY_PROFILES
    assert sc.n_enb is None
    assert sc.effective_n_enb == DEFAULT_N_GROUPS
    assert sc.n_sgw == 1
    assert sc.policy.target_delay_s == 0.1
    assert sc.policy.multipliers == (1.0, 2.0, 2.5)
    assert sc.lambda_beta() == pytest.approx(63.21205588285577, rel=1e-13)


def test_population_offsets_drawn_or_fixed():
    sc = scenario_from_dict(MINIMAL)
    pop = sc.population(np.random.default_rng(0))
    assert pop.q_total == 1000
    assert len(pop.offsets_s) == DEFAULT_N_GROUPS
    assert all(0.0 <= w < 10.0 for w in pop.offsets_s)
    # a different generator draws different phases
    other = sc.population(np.random.default_rng(1))
    assert pop.offsets_s != other.offsets_s

    doc = {"traffic": {"period_s": 10.0, "q_total": 4, "n_groups": 2,
                       "offsets_s": [1.0, 6.0]}}
    fixed = scenario_from_dict(doc)
    pop = fixed.population(np.random.default_rng(0))
    assert pop.offsets_s == (1.0, 6.0)


def test_required_fields_and_unknown_keys():
    with pytest.raises(ConfigurationError, match="traffic.period_s: required"):
        scenario_from_dict({"traffic": {"q_total": 100}})
    with pytest.raises(ConfigurationError, match="traffic.q_total: required"):
        scenario_from_dict({"traffic": {"period_s": 10.0}})
    with pytest.raises(ConfigurationError, match="unknown top-level"):
        scenario_from_dict({**MINIMAL, "extra": {}})
    with pytest.raises(ConfigurationError, match=r"unknown field\(s\) phase"):
        scenario_from_dict({"traffic": {**MINIMAL["traffic"], "phase": 1}})
    with pytest.raises(ConfigurationError, match="not divisible"):
        scenario_from_dict({"traffic": {"period_s": 10.0, "q_total": 1001}})
    with pytest.raises(ConfigurationError, match="offsets_s"):
        scenario_from_dict({"traffic": {"period_s": 10.0, "q_total": 100,
                                        "n_groups": 4, "offsets_s": [0.0]}})
    with pytest.raises(ConfigurationError, match="q_total"):
        scenario_from_dict({"traffic": {"period_s": 10.0, "q_total": "many"}})
    with pytest.raises(ConfigurationError):
        scenario_from_dict({"traffic": {**MINIMAL["traffic"],
                                        "horizon_s": -5.0}})
    with pytest.raises(ConfigurationError):
        scenario_from_dict("not a mapping")


def test_explicit_null_means_default():
    doc = {"traffic": {**MINIMAL["traffic"], "tx_probability": None,
                       "offsets_s": None}}
    sc = scenario_from_dict(doc)
    assert sc.params.tx_probability == pytest.approx(1 - np.exp(-1.0))
    assert sc.offsets_s is None


def test_capacity_scale_and_custom_profiles():
    doc = {
        "traffic": MINIMAL["traffic"],
        "entities": {
            "capacity_scale": 2.0,
            "profiles": [
                {"entity": "MME", "ops_per_bearer": 9.0, "capacity": 5000.0,
                 "messages_per_bearer": 9},
                {"entity": "UE", "ops_per_bearer": 3.0, "capacity": 1000.0},
            ],
        },
    }
    sc = scenario_from_dict(doc)
    assert len(sc.profiles) == 2
    mme = next(p for p in sc.profiles if p.entity == "MME")
    assert mme.capacity == 10_000.0  # 5000 * 2
    ue = next(p for p in sc.profiles if p.entity == "UE")
    assert ue.messages_per_bearer == 1
    with pytest.raises(ConfigurationError, match=r"entities.profiles\[0\]"):
        scenario_from_dict({
            "traffic": MINIMAL["traffic"],
            "entities": {"profiles": [{"entity": "MME"}]},
        })
    with pytest.raises(ConfigurationError, match="capacity_scale"):
        scenario_from_dict({
            "traffic": MINIMAL["traffic"],
            "entities": {"capacity_scale": 0.0},
        })


def test_topology_and_scaling_blocks():
    doc = {
        "traffic": MINIMAL["traffic"],
        "topology": {"n_enb": 4, "n_sgw": 2, "link_latency_s": 1e-3,
                     "encryption_ops": 2.0},
        "scaling": {"target_delay_s": 0.05, "percentile": 0.9,
                    "multipliers": [1.0, 3.0], "hysteresis": 0.2,
                    "scope": "mme"},
    }
    sc = scenario_from_dict(doc)
    assert sc.n_enb == 4 and sc.effective_n_enb == 4
    assert sc.n_sgw == 2
    assert sc.link_latency_s == 1e-3
    assert sc.encryption_ops == 2.0
    assert sc.policy.target_delay_s == 0.05
    assert sc.policy.multipliers == (1.0, 3.0)
    assert sc.policy.scale_entities == frozenset({"MME"})
    with pytest.raises(ConfigurationError, match="scaling.scope"):
        scenario_from_dict({"traffic": MINIMAL["traffic"],
                            "scaling": {"scope": "everything"}})
    with pytest.raises(ConfigurationError, match="topology.n_enb"):
        scenario_from_dict({"traffic": MINIMAL["traffic"],
                            "topology": {"n_enb": 0}})


def test_scenario_dict_round_trip():
    doc = {
        "traffic": {"period_s": 10.0, "q_total": 500, "n_groups": 10,
                    "horizon_s": 300.0},
        "topology": {"n_sgw": 3},
        "scaling": {"target_delay_s": 0.2},
    }
    sc = scenario_from_dict(doc)
    again = scenario_from_dict(scenario_to_dict(sc))
    assert again == sc


def test_load_scenario_yaml(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(MINIMAL))
    sc = load_scenario(path)
    assert sc.q_total == 1000
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_scenario(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("traffic: [unbalanced")
    with pytest.raises(ConfigurationError, match="not valid YAML"):
        load_scenario(bad)
