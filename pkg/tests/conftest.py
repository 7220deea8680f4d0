import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def accept():
    """Record one acceptance line and fail the test when the criterion fails."""
    def record(number, title, ok, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"))
        print(ACCEPTANCE_LINES[-1][1])
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
