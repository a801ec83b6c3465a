import pytest

from eqriccati import fixtures
from eqriccati.picard import SolveOptions, solve


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line
    return record


@pytest.fixture(scope="session")
def stationary_solution():
    spec = fixtures.stationary()
    return spec, solve(spec, SolveOptions())


@pytest.fixture(scope="session")
def inconsistent_solution():
    spec = fixtures.time_inconsistent()
    return spec, solve(spec, SolveOptions())
