import numpy as np
import pytest

from polydg.mesh import agglomerate, coarsen, generate_structured, random_voronoi


@pytest.fixture(scope="session")
def quad4():
    return generate_structured("quad", 4)


@pytest.fixture(scope="session")
def voronoi32():
    return random_voronoi(32, seed=7)


@pytest.fixture(scope="session")
def agglomerated_pair():
    fine = random_voronoi(64, seed=11)
    coarse, nesting = coarsen(fine, agglomerate(fine, 4))
    return fine, coarse, nesting


@pytest.fixture(scope="session")
def nonnested_pair():
    return random_voronoi(48, seed=5), random_voronoi(9, seed=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_spd(rng):
    """SPD matrices with eigenvalues spread over ``[1, cond]``."""

    def make(n, cond=1e3):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        return (q * np.geomspace(1.0, cond, n)) @ q.T

    return make
