import pytest

_LINES = []


@pytest.fixture
def verdict():
    """Record one ``criterion N: PASS|FAIL detail`` line; printed at the end
    of the session so it shows up without ``-s``."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(line)
