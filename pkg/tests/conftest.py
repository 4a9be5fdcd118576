import pytest

from trajinv.dynamics import SimConfig
from trajinv.grid import bake_grid, subsample_grid

ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="full-scale; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rifle_grid_500():
    return bake_grid(SimConfig(angular_density=500, max_radius=200.0, profile_name="plausible-rifle"))


@pytest.fixture(scope="session")
def rifle_sub_500(rifle_grid_500):
    return subsample_grid(rifle_grid_500)


@pytest.fixture(scope="session")
def vacuum_grid_500():
    return bake_grid(SimConfig(angular_density=500, max_radius=200.0, profile_name="vacuum"))
