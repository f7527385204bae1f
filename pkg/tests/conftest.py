from __future__ import annotations

import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from cmlbench.config import Limits

settings.register_profile(
    "repo", deadline=None, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large, HealthCheck.filter_too_much],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

GOLDEN = Path(__file__).resolve().parent.parent / "golden"

# Bounds used for the golden examples throughout the suite.
SMALL = Limits(value=2, addr=4, loop=2, wait=2, env=2)


@pytest.fixture
def golden():
    return GOLDEN


@pytest.fixture
def small():
    return SMALL


# ---------------------------------------------------------------------------
# One PASS/FAIL line per acceptance criterion at the end of the run.

_criteria: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        terminalreporter.write_line(f"{_criteria[name]}  {name}")
