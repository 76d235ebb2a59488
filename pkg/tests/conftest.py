import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
