import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import edgesim as es


@pytest.fixture
def desk():
    cfg = es.desk_config()
    return cfg, es.Topology.full(cfg.n_agents)


@pytest.fixture
def tiny():
    """Three agents, short horizon: fast but still contended."""
    cfg = es.desk_config(n_agents=3, horizon=25, drain_slots=5, timeout=8)
    return cfg, es.Topology.full(cfg.n_agents)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
