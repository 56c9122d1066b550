"""Shared pytest hooks.

test_acceptance registers one line per end-to-end check as it runs; the
summary hook replays them after the test report so they are visible without
-s, pass or fail.
"""

from __future__ import annotations


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance checks")
    for line in RESULTS:
        terminalreporter.write_line(line)
