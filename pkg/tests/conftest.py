import numpy as np
import pytest
from hypothesis import settings

from bibit import bitcore as bc

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(params=bc.available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line and assert it."""

    def record(number: int, passed: bool, detail: str):
        _CRITERIA[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
