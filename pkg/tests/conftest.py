import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def grid256():
    from echosim import PhaseSpaceGrid
    return PhaseSpaceGrid(256, -8.0, 8.0)


@pytest.fixture
def grid128():
    from echosim import PhaseSpaceGrid
    return PhaseSpaceGrid(128, -8.0, 8.0)


def random_density(grid, rank, seed, width=1.2):
    """Mixture of ``rank`` random smooth packets well inside the box."""
    from echosim import WaveFunction, mixture
    rng = np.random.default_rng(seed)
    x = grid.x
    states = []
    for _ in range(rank):
        c = rng.uniform(-2, 2)
        k = rng.uniform(-2, 2)
        amp = np.exp(-((x - c) ** 2) / (2 * width ** 2) + 1j * k * x) * (1 + 0.3 * rng.standard_normal() * x)
        states.append(WaveFunction(grid, amp).normalized())
    w = rng.dirichlet(np.ones(rank))
    return mixture(states, w)
