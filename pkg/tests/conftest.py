"""Shared fixtures and the acceptance-criteria reporter.

Acceptance tests (tests/test_acceptance.py) record one line per criterion
through the ``criterion_log`` fixture; the hook below reprints every recorded
line in the terminal summary so a plain ``pytest`` run always shows one
visible pass/fail line per criterion, whatever the capture settings.
"""

from __future__ import annotations

import pytest

from gridbp import (
    build_factor_graph,
    load_case,
    make_mask,
    sample_measurements,
)


class CriterionLog:
    """Collects one formatted pass/fail line per acceptance criterion."""

    def __init__(self) -> None:
        self.lines: list[tuple[int, str]] = []

    def record(self, number: int, passed: bool, detail: str) -> str:
        status = "PASS" if passed else "FAIL"
        line = f"[criterion {number:2d}] {status} {detail}"
        self.lines.append((number, line))
        # Also print immediately so `pytest -s` interleaves the line with the
        # test that produced it.
        print(line)
        return line


_LOG = CriterionLog()


@pytest.fixture(scope="session")
def criterion_log() -> CriterionLog:
    return _LOG


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LOG.lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(_LOG.lines):
        terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# Bundled cases, loaded once per session.


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def ieee30():
    return load_case("ieee30")


@pytest.fixture(scope="session")
def ieee57():
    return load_case("ieee57")


@pytest.fixture(scope="session")
def ieee118():
    return load_case("ieee118")


@pytest.fixture(scope="session")
def ieee300():
    return load_case("ieee300")


@pytest.fixture(scope="session")
def graph_for():
    """Factory: (case, fraction, variance, seed, strategy) -> (graph, meas)."""

    def make(case, fraction=0.0, variance=1e-4, seed=0, strategy="Uniform"):
        mask = make_mask(case, fraction, strategy, seed)
        meas = sample_measurements(case, mask, variance, seed)
        return build_factor_graph(case, meas), meas

    return make
