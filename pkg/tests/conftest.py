import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddbh import CorrelationState

settings.register_profile("ddbh", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ddbh")

ACCEPTANCE = {}


def random_state(rng: np.random.Generator, n: int, scale: float = 1.0) -> CorrelationState:
    """Random moments obeying the storage symmetries (not necessarily a physical state)."""
    first = scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
    m = scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    s = scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return CorrelationState(first, m + m.conj().T, s + s.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record an acceptance verdict; the summary is printed at the end of the session."""

    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (passed, detail)
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
