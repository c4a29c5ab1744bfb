"""Shared fixtures: small, fast scenario configs for the unit tests.

The acceptance tests build their own full-scale batches; everything here is
sized to keep a single test under a few seconds.
"""

import numpy as np
import pytest

from subnetctl.linksim import RadioParams
from subnetctl.scenario import ScenarioConfig


@pytest.fixture
def rparams():
    return RadioParams()


@pytest.fixture
def small_cfg():
    """5 subnetworks, 200 plant steps — enough to exercise every code path."""
    return ScenarioConfig(n_subnetworks=5, horizon=200, episodes=2, seed=77)


@pytest.fixture
def rng():
    return np.random.default_rng(123)
