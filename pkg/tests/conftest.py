"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(item.user_properties).get("detail", "")
        _results[item.nodeid] = (marker.args[0], report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_results.values(), key=lambda r: r[0]):
        line = f"{'PASS' if passed else 'FAIL'}  {label}"
        terminalreporter.write_line(line + (f"\n        {detail}" if detail else ""))
