import pathlib

import pytest


@pytest.fixture
def datadir():
    return pathlib.Path(__file__).parent / "data"


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one acceptance-criterion pass/fail line, then assert it."""
    def record(num, ok, detail):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config.acceptance_lines.append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.line(ln)
