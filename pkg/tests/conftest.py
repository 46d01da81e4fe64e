import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    The test body calls ``verdict(number, ok, detail)`` and then asserts
    ``ok``, so the line is recorded whether or not the criterion holds.
    """

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
