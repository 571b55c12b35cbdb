import sys

import pytest

from avlatency.config import load_fixture


@pytest.fixture(scope="session")
def fixtures():
    """Shipped scenario configs keyed by name."""
    names = ("car_following_benign", "car_following_attacked", "signal_benign", "signal_attacked")
    return {n: load_fixture(n) for n in names}


def pytest_terminal_summary(terminalreporter):
    """Repeat the per-criterion acceptance lines after the test run."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
