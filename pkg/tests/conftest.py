from __future__ import annotations

import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


ACCEPTANCE_CRITERIA = range(1, 10)
_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the pass/fail line of one acceptance criterion."""
    def record(n: int, ok: bool, detail: str) -> bool:
        _LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_LINES[n])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        terminalreporter.write_line(_LINES.get(n, f"criterion {n}: FAIL  (not reached)"))
