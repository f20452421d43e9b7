import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tabrl.envs import RngStream, random_mdp

settings.register_profile(
    "tabrl", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tabrl")


@pytest.fixture
def rng():
    return RngStream(12345)


@pytest.fixture
def small_mdp():
    return random_mdp(5, 3, 0.9, 1.0, RngStream(7))


def chain_mdp(gamma=0.5):
    """Two states, one action: 0 -> 1 -> 1 with rewards (0, 1)."""
    from tabrl.mdp import DiscountedMdp
    P = np.array([[0.0, 1.0], [0.0, 1.0]])
    return DiscountedMdp(P, np.array([[0.0], [1.0]]), gamma)
