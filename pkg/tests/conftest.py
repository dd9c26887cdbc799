import numpy as np
import pytest

from blockpg import ObservationRecord, TableEmission, TabularHmm


@pytest.fixture
def sticky_model():
    """K=2, informative emissions; the workhorse for sampler tests."""
    return TabularHmm(
        [0.6, 0.4],
        [[0.85, 0.15], [0.2, 0.8]],
        TableEmission([[0.75, 0.25], [0.3, 0.7]]),
    )


@pytest.fixture
def uniform_model():
    """Fully uniform K=2 model: flat initial, flat transitions, g == 1."""
    return TabularHmm([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], TableEmission([[1.0], [1.0]]))


def random_tabular(rng, k, num_symbols=None, concentration=2.0):
    """Seeded random stochastic model over k states."""
    v = num_symbols or k
    return TabularHmm(
        rng.dirichlet(np.ones(k)),
        rng.dirichlet(np.full(k, concentration), size=k),
        TableEmission(rng.dirichlet(np.full(v, concentration), size=k)),
    )


def random_obs(rng, T, num_symbols):
    return ObservationRecord(rng.integers(0, num_symbols, size=T))
