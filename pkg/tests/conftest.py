"""Prints one PASS/FAIL line per acceptance criterion after the test run.

Acceptance tests carry ``@pytest.mark.acceptance("<criterion>")`` and may
attach measured values with the ``record_property`` fixture; those values are
echoed next to the verdict.
"""

import pytest

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): test decides one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    failed = report.failed or (report.when == "setup" and report.skipped)
    if report.when == "call" or failed:
        prev = _VERDICTS.get(name, (True, []))
        _VERDICTS[name] = (prev[0] and not failed, prev[1] + list(item.user_properties))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, props) in _VERDICTS.items():
        detail = "  ".join(f"{k}={v}" for k, v in props)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
