import pytest

# acceptance verdict lines, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def verdict():
    """Record one criterion's PASS/FAIL line; returns whether it passed."""
    def record(number, ok, elapsed, budget, detail):
        within = elapsed < budget
        status = "PASS" if ok and within else "FAIL"
        line = f"criterion {number:2d}: {status}  {detail}  [{elapsed:.1f}s / budget {budget:g}s]"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok and within
    return record
