import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES: list[str] = []

FULL = os.environ.get("MP2_FULL_ACCEPTANCE") == "1"
RUN_DIR = Path(os.environ.get("MP2_ACCEPTANCE_DIR", Path(__file__).resolve().parent.parent / "acceptance_runs"))


@pytest.fixture
def record():
    """Record one acceptance line; returns ``passed`` so tests can assert on it."""
    def _record(criterion: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
