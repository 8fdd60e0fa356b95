import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one "PASS"/"FAIL" line per acceptance criterion; the lines are
    printed in the terminal summary whatever the capture mode."""
    lines = request.config.stash[_REPORT_KEY]

    def report(number: int, ok: bool, text: str) -> bool:
        lines.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
