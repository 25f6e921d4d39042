import numpy as np
import pytest

from cornerfem import problems


@pytest.fixture(scope="session")
def square():
    return problems.bundled_domain("square")


@pytest.fixture(scope="session")
def lshape():
    return problems.bundled_domain("lshape")


@pytest.fixture(scope="session")
def neumann_square():
    return problems.bundled_domain("square-neumann")


@pytest.fixture(scope="session")
def artificial_square():
    return problems.bundled_domain("square-artificial")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
