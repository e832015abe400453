import numpy as np
import pytest

from epsfp.waveform import default_population, generate_dsss_baseband, rogue_population


@pytest.fixture(scope="session")
def population():
    return default_population()


@pytest.fixture(scope="session")
def rogues(population):
    return rogue_population(population)


@pytest.fixture(scope="session")
def baseband():
    """The shared 802.11b-style packet used by every scenario."""
    return generate_dsss_baseband(np.random.default_rng(11).integers(0, 2, 1300))


@pytest.fixture(scope="session")
def cm_baseband():
    """Constant-modulus burst: all-zero payload."""
    return generate_dsss_baseband(np.zeros(1300, dtype=np.int64))
