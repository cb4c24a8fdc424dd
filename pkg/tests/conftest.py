"""Shared fixtures: the stock entity profiles and seeded arrival helpers."""

import numpy as np
import pytest

from miotcore.config import DEFAULT_ENTITY_PROFILES
from miotcore.traffic import EventStream


@pytest.fixture
def profiles():
    return DEFAULT_ENTITY_PROFILES


@pytest.fixture
def profile_mme(profiles):
    return next(p for p in profiles if p.entity == "MME")


def poisson_stream(rate_per_s, n_events, seed, source_ids=None):
    """Sorted Poisson EventStream with n_events arrivals at the given rate."""
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.exponential(1.0 / rate_per_s, size=n_events))
    if source_ids is None:
        return EventStream(times)
    return EventStream(times, source_ids)
