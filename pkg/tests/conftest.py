import numpy as np
import pytest

from empty_car_routing.core.config import reset_settings
from empty_car_routing.solvers.fluid_opt import solve_fluid_optimum
from empty_car_routing.utils.models import NetworkParams, RoutingMatrix
from empty_car_routing.utils.scenarios import builtin_scenario


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Fresh settings per test, with reports going to a temp directory"""
    monkeypatch.setenv("ECR_OUTPUT_DIR", str(tmp_path / "output_results"))
    reset_settings()
    yield
    reset_settings()


@pytest.fixture(scope="session")
def two_region():
    return builtin_scenario("two_region")


@pytest.fixture(scope="session")
def didi():
    return builtin_scenario("nine_region_didi")


@pytest.fixture(scope="session")
def city():
    return builtin_scenario("five_region_city")


@pytest.fixture(scope="session")
def two_region_optimum(two_region):
    return solve_fluid_optimum(two_region)


@pytest.fixture(scope="session")
def didi_optimum(didi):
    return solve_fluid_optimum(didi)


@pytest.fixture
def q_third():
    """Region 2 sends a third of its drop-offs back empty"""
    return RoutingMatrix(q=[[1.0, 0.0], [1.0 / 3.0, 2.0 / 3.0]])


@pytest.fixture
def q_half():
    return RoutingMatrix(q=[[1.0, 0.0], [0.5, 0.5]])


@pytest.fixture
def mixing_params():
    """Two regions with all P and Q entries positive"""
    return NetworkParams(
        r=2,
        n_cars=100,
        lam=[0.6, 0.4],
        mu=np.ones((2, 2)),
        p=[[0.3, 0.7], [0.6, 0.4]],
    )


@pytest.fixture
def mixing_routing():
    return RoutingMatrix(q=[[0.8, 0.2], [0.3, 0.7]])
