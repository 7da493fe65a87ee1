"""Shared pytest hooks for the acceptance report.

The acceptance tests append one line per criterion to their module-level
REPORT list; after the run the lines are echoed in a dedicated terminal
section so pass/fail status and the measured figures are visible in the
plain pytest output.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("tests.test_acceptance") \
        or sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None) if mod else None
    if not lines:
        return
    terminalreporter.section("acceptance report")
    for line in lines:
        terminalreporter.write_line(line)
