import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL for an acceptance criterion, then assert it."""

    def record(number, name, ok, detail=""):
        _VERDICTS.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
