import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def uniform_sample(seed: int, n: int) -> np.ndarray:
    """Sorted uniform sample; ties have probability zero at these sizes."""
    return np.sort(np.random.default_rng(seed).random(n))


@pytest.fixture(scope="session")
def table():
    from rpstest.pvalue import load_table

    return load_table(statistic="rps_star")


@pytest.fixture(scope="session")
def rss_table():
    from rpstest.pvalue import load_table

    return load_table(statistic="rss")


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
