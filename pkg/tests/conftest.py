import numpy as np
import pytest

from mixhawkes.model import ModelParams, SubjectData


def make_subject(horizon=10.0, x=(1.0,), z=(1.0,), tracked=None, counts=None, sid="s1"):
    n = int(np.ceil(horizon))
    tracked = np.ones(n, bool) if tracked is None else np.asarray(tracked, bool)
    counts = np.zeros(n, int) if counts is None else np.asarray(counts)
    return SubjectData(sid, horizon, tracked, counts, x=np.asarray(x, float),
                       z=np.asarray(z, float))


def make_params(alpha=1.0, delta=0.6, beta=(0.0,), zeta=(0.0,), phi=1.0, xi=1.0):
    return ModelParams(alpha, delta, list(beta), list(zeta), phi, xi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
