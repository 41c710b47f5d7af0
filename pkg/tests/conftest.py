import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        _ACCEPTANCE[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        number, _, rest = name[len("test_criterion_"):].partition("_")
        terminalreporter.write_line(f"{_ACCEPTANCE[name]}  criterion {number}: {rest.replace('_', ' ')}")
