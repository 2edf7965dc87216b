import numpy as np
import pytest
from hypothesis import settings

from sidlab import potentials as P

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def quad_pair():
    """V = x^2/2 and W = x^2/2 in one dimension (rho = alpha = 1, m = 0)."""
    return P.quadratic(1.0, [0.0]), P.quadratic(1.0, [0.0], role="W")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    """Print one PASS/FAIL line for an acceptance criterion (also repeated in the summary)."""
    line = f"[acceptance {number:2d}] {'PASS' if passed else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
