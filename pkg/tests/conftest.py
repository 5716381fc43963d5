import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.fixture
def detail(request):
    """Collects measured values to show on the criterion's summary line."""
    marker = request.node.get_closest_marker("acceptance")
    notes: list[str] = []
    if marker:
        _criteria.setdefault(marker.args[0], {"title": marker.args[1]})["notes"] = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    entry = _criteria.setdefault(marker.args[0], {"title": marker.args[1]})
    if report.failed or (report.when == "call" and report.skipped):
        entry["status"] = "FAIL" if report.failed else "SKIP"
    elif report.when == "call" and "status" not in entry:
        entry["status"] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        notes = "; ".join(entry.get("notes", []))
        line = f"criterion {number} {entry.get('status', 'NOT RUN'):4} {entry['title']}"
        terminalreporter.write_line(f"{line} -- {notes}" if notes else line)
