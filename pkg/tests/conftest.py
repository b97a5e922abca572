import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nudgeflow.fields import GridSpec

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(2 * np.pi, 16)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(2 * np.pi, 32)


# Acceptance criteria report one line each; the lines are also echoed in the
# terminal summary so they survive output capture.
_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
