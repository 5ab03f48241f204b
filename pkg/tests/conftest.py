import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest


@pytest.fixture
def fixtures():
    return Path(__file__).parent / "fixtures"


_criteria: list[str] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if report.when == "call" and "criterion" in props:
        detail = f"  [{props['detail']}]" if "detail" in props else ""
        _criteria.append(f"{'PASS' if report.passed else 'FAIL'}  {props['criterion']}{detail}")


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
