from __future__ import annotations

import sys

import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary.

    ``ok=None`` records a skipped criterion, a string is used as the status
    verbatim (e.g. ``"INFO"`` for measurements that are not asserted).
    """

    def record(number: int, title: str, ok, detail: str = ""):
        if isinstance(ok, str):
            status = ok
        else:
            status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"[{status}] criterion {number:>2}: {title} {detail}".rstrip()
        _ACCEPTANCE_LINES.append(line)
        print(line, file=sys.stderr)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
