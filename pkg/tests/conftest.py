import numpy as np
import pytest

from greenlab.mmspace import build_cone, build_glued_balls, build_grid, path_graph


@pytest.fixture(scope="session")
def grid2():
    return build_grid(2, 0.5, 1 / 32)


@pytest.fixture(scope="session")
def grid2_fine():
    return build_grid(2, 0.5 + 4 / 64, 1 / 64)


@pytest.fixture(scope="session")
def grid3():
    return build_grid(3, 0.5, 1 / 16)


@pytest.fixture(scope="session")
def weighted2():
    return build_grid(2, 0.5, 1 / 32, alpha=1.0)


@pytest.fixture(scope="session")
def cone2():
    return build_cone(2, 0.5, 1 / 32)


@pytest.fixture(scope="session")
def glued():
    return build_glued_balls(3, 1 / 4, 0.5)


@pytest.fixture(scope="session")
def all_spaces(grid2, grid3, weighted2, cone2, glued):
    return {"grid2": grid2, "grid3": grid3, "weighted2": weighted2, "cone2": cone2,
            "glued": glued}


@pytest.fixture
def path10():
    return path_graph(10)


def center_of(space):
    return space.nearest_vertex(np.zeros(space.n))


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
