"""Shared pytest plumbing: the acceptance-criteria scoreboard.

Acceptance tests record their verdict before asserting, so the terminal
summary prints one line per criterion even when a criterion fails.
"""

from __future__ import annotations

ACCEPTANCE_RESULTS: dict[int, tuple[str, str, str]] = {}


def record_criterion(number: int, title: str, status: bool | str, detail: str = "") -> None:
    """Register a verdict; a bool maps to PASS/FAIL, strings pass through."""
    if isinstance(status, bool):
        status = "PASS" if status else "FAIL"
    ACCEPTANCE_RESULTS[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, status, detail = ACCEPTANCE_RESULTS[number]
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line = f"{line} ({detail})"
        terminalreporter.write_line(line)
