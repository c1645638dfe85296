import numpy as np
import pytest

from cachechain.placement import PlacementTarget, StateDistribution, solve_eta
from cachechain.policy import compile_policy
from cachechain.state_space import ContentCatalog, StateSpace

# N_f = 5, c = 2 worked example
P_STAR = [0.9, 0.7, 0.3, 0.1, 0.0]
ETA_1 = [0.6, 0.2, 0.1, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]
ETA_2 = [0.62, 0.22, 0.06, 0.0, 0.06, 0.02, 0.0, 0.02, 0.0, 0.0]

# eta over the ten (5, 2) states for the sequence-decomposition example
SEQUENCE_ETA = np.array([10, 9, 8, 6, 5, 1, 4, 3, 7, 2]) / 55


@pytest.fixture
def space52():
    return StateSpace(5, 2)


@pytest.fixture
def target52():
    return PlacementTarget(P_STAR, 2)


@pytest.fixture
def zipf5():
    return ContentCatalog.zipf(5, 0.8)


@pytest.fixture
def sequence_eta():
    return StateDistribution(SEQUENCE_ETA)


@pytest.fixture
def compiled52(space52, target52, zipf5):
    """Max-entropy eta* for P_STAR and its compiled policy (connected support)."""
    eta = solve_eta(target52, space52.state_matrix(), "max_entropy")
    return eta, compile_policy(space52, eta, zipf5)


def random_eta(rng: np.random.Generator, n_states: int) -> StateDistribution:
    """Full-support random state distribution (always connected)."""
    w = rng.dirichlet(np.ones(n_states))
    w = np.maximum(w, 1e-6)
    return StateDistribution(w / w.sum())
