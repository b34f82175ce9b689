import numpy as np
import pytest

from sbridge import Prior, ReferenceProcess, geometric_schedule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_process(rng):
    """d=4 reference chain with a non-uniform prior on a 50-step grid."""
    schedule = geometric_schedule(50, 0.3)
    prior = Prior(rng.dirichlet(np.ones(4) * 5.0))
    return ReferenceProcess(schedule, prior)


def random_coupling(rng, d):
    from sbridge import Coupling

    return Coupling(rng.dirichlet(np.ones(d * d)).reshape(d, d))
