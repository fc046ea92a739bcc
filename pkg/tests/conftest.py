import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_matrix(rng, n, m=None):
    m = n if m is None else m
    return rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))


def random_state(rng, n):
    a = random_matrix(rng, n)
    r = a @ a.conj().T
    return r / np.trace(r)


@pytest.fixture(autouse=True, scope="session")
def _isolated_fit_cache(tmp_path_factory):
    # keep test fits out of the user's cache directory
    mp = pytest.MonkeyPatch()
    mp.setenv("STOCHMODE_CACHE_DIR", str(tmp_path_factory.mktemp("fit_cache")))
    yield
    mp.undo()
