import numpy as np
import pytest

from heatnull.geometry import Domain, build_grid
from heatnull.heat_ops import ProblemSpec
from heatnull.weights import WeightSystem, build_eta

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("]")[0].split("[")[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _report(number: int, title: str, passed: bool, detail: str):
        line = f"[{number:2d}] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return _report


def sine0(x):
    return np.sin(np.pi * x[:, 0])


@pytest.fixture(scope="session")
def calib_grid():
    return build_grid(Domain.interval(0.0, 1.0), 64, 128, 1.0)


@pytest.fixture(scope="session")
def calib_eta(calib_grid):
    return build_eta(calib_grid)


@pytest.fixture(scope="session")
def calib_spec(calib_grid):
    return ProblemSpec(calib_grid, b=1.0, y0=sine0)


@pytest.fixture(scope="session")
def calib_ws(calib_eta):
    return WeightSystem.default(calib_eta, 1.0, profile="terminal")


@pytest.fixture(scope="session")
def calib_solution(calib_spec, calib_ws):
    from heatnull.nullcontrol import solve_null_control

    return solve_null_control(calib_spec, calib_ws, min_eig=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
