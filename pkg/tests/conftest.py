import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frenetplan.basis import TimeGrid, build_basis
from frenetplan.context import PlanningConfig, PlanningContext
from frenetplan.planner import Planner

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def basis():
    return build_basis(10, TimeGrid(0.0, 10.0, 100))


@pytest.fixture(scope="session")
def planner(basis):
    return Planner(basis)


@pytest.fixture(scope="session")
def ctx():
    return PlanningContext(PlanningConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from oracles import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
