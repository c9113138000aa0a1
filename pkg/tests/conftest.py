"""Acceptance reporting: one PASS/FAIL/SKIP line per ``criterion`` marker.

Tests tag themselves with ``@pytest.mark.criterion(n)`` and may attach a
short measurement through ``record_property("detail", ...)``.  A criterion
passes only if every test carrying its number passed.
"""

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion", None)
    if number is None:
        return
    entry = _RESULTS.setdefault(number, {"outcomes": [], "details": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)
        entry["details"] += [str(v) for k, v in report.user_properties if k == "detail"]
        if report.skipped and isinstance(report.longrepr, tuple):
            entry["details"].append(report.longrepr[2].removeprefix("Skipped: "))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        outcomes = _RESULTS[number]["outcomes"]
        if any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        details = "; ".join(_RESULTS[number]["details"])
        terminalreporter.write_line(f"criterion {number:2d}: {status}" + (f"  ({details})" if details else ""))
