import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thermofield.spectral import DiagonalSystem, ModeGrid, TestVector, build_neutral

settings.register_profile("thermofield", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("thermofield")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid():
    return ModeGrid(delta_k=1.0, half_count=1, mass=1.0)


@pytest.fixture
def neutral3(small_grid):
    return build_neutral(small_grid, beta=1.0)


def unit(system: DiagonalSystem, j: int, amp: float = 1.0) -> TestVector:
    return TestVector(amp * np.eye(system.d)[j], system)


def random_real_vector(rng, system: DiagonalSystem, scale: float = 1.0) -> TestVector:
    return TestVector(scale * rng.normal(size=system.d), system)
