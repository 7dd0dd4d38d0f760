import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mot_envelope import AtomGrid, ModifiedCost, call_spread, solve_recursive

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    derandomize=True,
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one summary line per acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


SPREADS = [(-0.1, 0.5), (0.0, 0.5), (0.2, 0.8), (-0.5, 0.3)]
ATOMS3 = AtomGrid((-1.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def spread_solution():
    """Hull solution for the (-0.1, 0.5) call spread at m = 50."""
    f = call_spread(-0.1, 0.5)
    sol = solve_recursive(ATOMS3, f, 50, "hull")
    full = ATOMS3.full_face()
    return sol, sol[full], ModifiedCost(ATOMS3, full, f)


def simplex_point(rng, n):
    w = rng.random(n) + 0.05
    return w / w.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
