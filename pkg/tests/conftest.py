"""Shared fixtures.

The reversion scenario's Riccati solution and coefficient table are expensive
enough to build once per session; everything downstream (control, sim,
acceptance) reuses them read-only.
"""

import pytest

from toxflow import (
    build_coefficient_table,
    default_grid,
    scenario_preset,
    solve_riccati,
)

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def reversion_spec():
    return scenario_preset("reversion")


@pytest.fixture(scope="session")
def momentum_spec():
    return scenario_preset("momentum")


@pytest.fixture(scope="session")
def signal_spec():
    return scenario_preset("short_signal")


@pytest.fixture(scope="session")
def grid(reversion_spec):
    return default_grid(reversion_spec)


@pytest.fixture(scope="session")
def ric(reversion_spec, grid):
    return solve_riccati(reversion_spec, grid)


@pytest.fixture(scope="session")
def table(reversion_spec, grid):
    return build_coefficient_table(reversion_spec, grid)


def record_acceptance(criterion: int, ok: bool, detail: str) -> str:
    line = "ACCEPTANCE %d: %s  %s" % (criterion, "PASS" if ok else "FAIL", detail)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
