import pytest

_acceptance_lines = []


@pytest.fixture
def acceptance_record():
    """Record one pass/fail line per acceptance criterion; the lines are
    echoed immediately and again in the terminal summary."""

    def record(number, name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"ACCEPTANCE {number} {name}: {status}"
        if detail:
            line += f" ({detail})"
        _acceptance_lines.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
