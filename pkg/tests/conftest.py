from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        doc = getattr(report, "criterion", report.nodeid.split("::")[-1])
        _acceptance[report.nodeid] = (doc, "PASS" if report.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(title): acceptance criterion description")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for title, status in sorted(_acceptance.values()):
        terminalreporter.write_line(f"{status}  {title}")


@pytest.fixture
def broker():
    from mqtt_stub import StubBroker

    b = StubBroker()
    b.start()
    yield b
    b.stop()
