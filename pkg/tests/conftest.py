from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dmpc_lab import scenario  # noqa: E402
from dmpc_lab.engine import run  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}
_RUNS: dict[tuple, object] = {}


def cached_run(name: str, **overrides):
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        cfg = scenario.packaged(name).with_overrides(**overrides)
        _RUNS[key] = (cfg, run(cfg))
    return _RUNS[key]


@pytest.fixture(scope="session")
def ex1_config():
    return scenario.packaged("ex1")


@pytest.fixture(scope="session")
def ex2_config():
    return scenario.packaged("ex2")


@pytest.fixture(scope="session")
def ex1_run():
    return cached_run("ex1")


@pytest.fixture(scope="session")
def ex2_run():
    return cached_run("ex2")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
