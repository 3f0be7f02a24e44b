import os
import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per criterion; printed in the terminal summary."""
    def report(number, title, passed, detail=""):
        line = f"criterion {str(number):>3} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        ACCEPTANCE_LINES.append(line)
        return passed
    return report


def _order(line):
    m = re.match(r"(\d+)(\w*)", line.split()[1])
    return int(m.group(1)), m.group(2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_order):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    # keep unit tests in-process unless a test sets the worker count itself
    if "FRACSPDE_WORKERS" not in os.environ:
        monkeypatch.setenv("FRACSPDE_WORKERS", "1")
