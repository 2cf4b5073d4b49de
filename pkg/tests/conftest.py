from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

DATA = TESTS / "data"
MINI = DATA / "mini"

# criterion id -> list of (test name, outcome)
_CRITERIA: dict[str, list[tuple[str, str]]] = {}


@pytest.fixture
def mini_dir() -> Path:
    return MINI


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        state = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _CRITERIA.setdefault(str(marker.args[0]), []).append((item.name, state))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k.lstrip("AC"))):
        states = [s for _, s in _CRITERIA[key]]
        if "FAIL" in states:
            overall = "FAIL"
        elif all(s == "SKIP" for s in states):
            overall = "SKIP"
        else:
            overall = "PASS"
        detail = ", ".join(f"{name}={s}" for name, s in _CRITERIA[key])
        terminalreporter.write_line(f"{key:<5} {overall:<5} {detail}")
