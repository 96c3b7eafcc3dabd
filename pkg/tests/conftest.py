import numpy as np
import pytest

from ergomom.invariant import build_law
from ergomom.model import get_family
from ergomom.simulate import SimConfig, replicate_rng, simulate_batch


@pytest.fixture(scope="session")
def ou():
    return get_family("ou")


@pytest.fixture(scope="session")
def nonlinear():
    return get_family("nonlinear")


@pytest.fixture(scope="session")
def ou_law(ou):
    return build_law(ou.model(1.0))


@pytest.fixture(scope="session")
def nl_law(nonlinear):
    return build_law(nonlinear.model(1.0))


def batch(family, gamma, R, T, dt=0.01, seed=0, init="stationary", scheme="euler"):
    """``R`` independent paths as an ``(R, N + 1)`` array."""
    model = family.model(gamma)
    law = build_law(model) if init == "stationary" else None
    cfg = SimConfig(T=T, dt=dt, init=init, scheme=scheme)
    rngs = [replicate_rng(seed, r) for r in range(R)]
    values, failed = simulate_batch(model, cfg, rngs, law=law)
    assert not failed.any()
    return values


@pytest.fixture(scope="session")
def ou_paths_T100(ou):
    """500 stationary OU(1) paths, T = 100, dt = 0.01."""
    return batch(ou, 1.0, 500, 100.0, seed=2024)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240607)
