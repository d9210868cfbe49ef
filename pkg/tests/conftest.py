import pytest

_REPORT = []


@pytest.fixture(scope="session")
def report():
    """Collects one summary line per acceptance criterion for the terminal summary."""

    def add(criterion: int, passed: bool, detail: str):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _REPORT.append((criterion, line))

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_REPORT):
            terminalreporter.write_line(line)
