import warnings

import pytest

from autoclock.exceptions import ValidityWarning

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a one-line pass/fail verdict for the acceptance summary."""

    def add(label: str, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return add


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ValidityWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
