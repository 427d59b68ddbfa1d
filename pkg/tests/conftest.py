import re

import numpy as np
import pytest

from mimo_ilc import casestudy as cs

_CRITERIA = {}


@pytest.fixture(scope="session")
def surrogate():
    return cs.build_surrogate()


@pytest.fixture(scope="session")
def scenario():
    return cs.load_scenario()


@pytest.fixture(scope="session")
def scenario_report(scenario):
    return cs.run_procedure2(scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_CRITERIA.items()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {name.replace('_', ' ')}: {verdict}")
