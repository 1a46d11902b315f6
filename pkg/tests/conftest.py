import pytest

_VERDICTS: dict = {}


@pytest.fixture
def criterion():
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _VERDICTS[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {detail}"
        print(_VERDICTS[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
