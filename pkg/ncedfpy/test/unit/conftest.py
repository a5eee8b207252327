import numpy as np
import pytest

from ncedfpy import simulator
from ncedfpy.kinematics import LinkGeometry
from ncedfpy.mppi import MppiConfig
from ncedfpy.test.utils import tiny_dataset


@pytest.fixture
def geom():
    return LinkGeometry()


@pytest.fixture
def two_links(geom):
    return [geom, geom]


@pytest.fixture(scope="session")
def small_dataset():
    return tiny_dataset(n_configs=3, n_points=10, seed=0)


@pytest.fixture(scope="session")
def small_validation():
    return tiny_dataset(n_configs=2, n_points=10, seed=1)


@pytest.fixture
def small_mppi():
    return MppiConfig(n_rollouts=40, horizon=4, seed=3)


@pytest.fixture
def small_scenario(small_mppi):
    """A 2-link robot among three slow obstacles; a few steps only."""
    return simulator.Scenario(
        robot=simulator.RobotSpec((LinkGeometry(), LinkGeometry())),
        environment=simulator.EnvironmentSpec(
            n_dynamic=2,
            n_static=1,
            max_speed=0.5,
            bounds_min=(-5.0, -5.0, 0.0),
            bounds_max=(5.0, 5.0, 6.0),
        ),
        mppi=small_mppi,
        t_max=3,
        cloud_points=30,
        seed=4,
    )


@pytest.fixture
def far_cloud():
    return np.array([[3.0, 3.0, 3.0], [-3.0, 2.0, 1.0], [0.0, -4.0, 2.0]])
