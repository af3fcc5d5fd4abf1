import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion_line():
    """Record one PASS/FAIL line for the acceptance summary; returns the verdict for asserting."""

    def record(label: str, passed: bool, detail: str = "") -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {label}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
