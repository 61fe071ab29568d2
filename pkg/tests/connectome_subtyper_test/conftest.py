"""Fixtures shared by the connectome subtyper tests."""

import numpy as np
import pytest

from tools.connectome_subtyper.simulator import SimConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope='session')
def small_simulation():
    """A small, well-separated simulated dataset and its truth."""
    sim = SimConfig(n_subjects=30, n_nodes=16, noise_var=2.0,
                    node_probs=((0.5, 0.5), (0.5, 0.5)), seed=3)
    return generate(sim)
