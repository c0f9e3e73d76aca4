import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridreduce.casefile import two_area_case
from gridreduce.rlsident import identify_fdne
from gridreduce.scenarios import VARIANTS, default_config, run_all

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_area():
    return two_area_case()


@pytest.fixture(scope="session")
def two_area_coeffs(two_area):
    return identify_fdne(two_area)


@pytest.fixture(scope="session")
def experiment(two_area, two_area_coeffs):
    """The four-variant fault experiment, timed over five repeats."""
    cfg = default_config(two_area)
    return run_all(two_area, cfg, two_area_coeffs, VARIANTS, repeats=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    """``verdict(n, ok, detail)`` records and prints one criterion line, then asserts."""
    def _v(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return _v


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
