import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion_line():
    """Record one acceptance verdict; the lines are echoed in the terminal summary."""
    def record(number, label, ok, detail):
        status = "PASS" if ok is True else ("FAIL" if ok is False else str(ok).upper())
        line = f"[{status}] criterion {number}: {label} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
