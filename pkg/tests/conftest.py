import numpy as np
import pytest

from brokenorbits import (CounterexampleParams, KineticModel, MechanicalModel,
                          TorusConfig, counterexample_model)
from brokenorbits.models import (FourierSeries2D, island_magnetic_fixture,
                                 standard_magnetic_fixture)


@pytest.fixture(scope="session")
def unit_torus():
    return TorusConfig((1.0, 1.0))


@pytest.fixture(scope="session")
def twopi_torus():
    return TorusConfig((2 * np.pi, 2 * np.pi))


@pytest.fixture(scope="session")
def kinetic(unit_torus):
    return KineticModel(unit_torus)


@pytest.fixture(scope="session")
def kinetic_2pi(twopi_torus):
    return KineticModel(twopi_torus)


@pytest.fixture(scope="session")
def mechanical(twopi_torus):
    V = FourierSeries2D(twopi_torus, [(1, 0, 0.3, 0.0), (0, 1, 0.0, 0.2)])
    return MechanicalModel(twopi_torus, V)


@pytest.fixture(scope="session")
def magnetic_strip():
    return standard_magnetic_fixture(2.0)


@pytest.fixture(scope="session")
def magnetic_island():
    return island_magnetic_fixture(2.0)


@pytest.fixture(scope="session")
def cx_params():
    return CounterexampleParams()


@pytest.fixture(scope="session")
def cx_model(cx_params):
    return counterexample_model(cx_params)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260811)


def random_state(model, rng, v_scale=1.0):
    q = rng.random(2) * model.torus.sides
    v = v_scale * rng.standard_normal(2)
    return q, v
