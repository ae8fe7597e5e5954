import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from foliation_forge.grid import Grid

settings.register_profile("forge", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("forge")


@pytest.fixture(scope="session")
def g16():
    return Grid((16, 16))


@pytest.fixture(scope="session")
def g32():
    return Grid((32, 32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion: acceptance(number, ok, detail)."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
