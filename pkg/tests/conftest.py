"""Collects the acceptance results and prints one PASS/FAIL line per criterion."""

import re

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}
_NAME = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _ACCEPTANCE[int(m.group(1))] = (m.group(2).replace("_", " "), outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, outcome, detail = _ACCEPTANCE[n]
        line = f"criterion {n} [{outcome}] {name}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
