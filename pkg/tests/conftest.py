import numpy as np
import pytest

from crossfield import CENTER_WAVELENGTH, build_case

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def lam():
    return CENTER_WAVELENGTH


@pytest.fixture(scope="session", params=[1, 2, 3], ids=["16x16", "32x32", "64x64"])
def case_scenario(request):
    return build_case(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
