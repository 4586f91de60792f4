"""Collects acceptance outcomes and prints one line per criterion at the end
of the run."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_details = defaultdict(list)
_titles = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _titles[number] = title
            item.user_properties.append(("criterion", number))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    number = props.get("criterion")
    if number is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[number].append(report.outcome == "passed")
    if report.when == "call":
        _details[number].extend(f"{k}={v}" for k, v in report.user_properties
                                if k != "criterion")


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_titles):
        results = _outcomes.get(number)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        line = f"criterion {number:>2}: {status:<7} {_titles[number]}"
        terminalreporter.write_line(line)
        if _details[number]:
            terminalreporter.write_line("              " + ", ".join(_details[number]))
