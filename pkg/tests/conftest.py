import pytest

ACCEPTANCE = {}


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion."""

    def _record(key: str, passed: bool, text: str) -> None:
        line = f"{key:<4} {'PASS' if passed else 'FAIL'}  {text}"
        ACCEPTANCE[key] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE[key])
