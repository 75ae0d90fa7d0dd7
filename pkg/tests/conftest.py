"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
