import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)``; ``None`` means skipped."""
    def record(name: str, passed: bool | None, detail: str = "") -> bool | None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _CRITERIA.append((name, status, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}  {detail}".rstrip())


@pytest.fixture(scope="session")
def small_synth():
    from pedattr.synth import generate_synthetic
    return generate_synthetic(120, attrs=3, noise=0.0, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
