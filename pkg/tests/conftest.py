import numpy as np
import pytest

from coarsekit import build_geometry, make_lsw_coefficients


@pytest.fixture(scope="session")
def cs05():
    return make_lsw_coefficients(0.5)


@pytest.fixture(scope="session")
def d05(cs05):
    return build_geometry(cs05)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
