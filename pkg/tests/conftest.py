import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Reporter ``report(number, title, ok, detail)`` for acceptance criteria.

    Prints one PASS/FAIL line, keeps it for the terminal summary and fails
    the test when ``ok`` is false.
    """

    def report(number, title, ok, detail=""):
        line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f": {detail}" if detail else "")
        print(line)
        _ACCEPTANCE.append((number, line))
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
