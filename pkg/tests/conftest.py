import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from antiadv.core_math import MlpParams

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def tiny_mlp() -> MlpParams:
    """Hand-set 2-3-2 ReLU network used by several modules' tests."""
    return MlpParams(
        (np.array([[1.0, -1.0], [0.5, 2.0], [-1.0, 0.25]]), np.array([[1.0, -2.0, 0.5], [-1.0, 1.0, 1.0]])),
        (np.array([0.1, -0.2, 0.3]), np.array([0.05, -0.05])),
    )


@pytest.fixture(scope="session")
def moons_models():
    """Small two-moons models shared across test modules (seed 0)."""
    from antiadv.experiments import fixture

    return fixture(0)


def central_difference(fn, x, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return grad


_criteria: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; returns the verdict."""

    def emit(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}"
        _criteria[number] = line
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criteria):
            terminalreporter.write_line(_criteria[number])
