import logging

import numpy as np
import pytest

from dma_noma import harness

# solver chatter is noise in test output
logging.disable(logging.WARNING)


@pytest.fixture(scope="session")
def desk_config():
    """Default desk-scale experiment configuration."""
    return harness.ExperimentConfig()


@pytest.fixture(scope="session")
def desk_scenario(desk_config):
    return harness.build_scenario(desk_config, seed=0)


def random_instance(rng, k=2, n_t=16, n_f=4):
    """Random channels/beamformers/powers for oracle comparisons."""
    ch_n = (rng.standard_normal((k, n_t)) + 1j * rng.standard_normal((k, n_t))) * 1e-2
    ch_f = (rng.standard_normal((k, n_t)) + 1j * rng.standard_normal((k, n_t))) * 1e-2
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_t, n_f))) * rng.uniform(0, 1, (n_t, n_f))
    vs = rng.standard_normal((k, n_f)) + 1j * rng.standard_normal((k, n_f))
    vs /= np.linalg.norm(vs, axis=1, keepdims=True)
    p_n = rng.uniform(0.05, 0.4, k)
    p_f = rng.uniform(0.01, 0.1, k)
    sigma2 = 10.0 ** rng.uniform(-11, -9)
    omega = rng.uniform(0.2, 0.8)
    return ch_n, ch_f, w, vs, p_n, p_f, sigma2, omega
