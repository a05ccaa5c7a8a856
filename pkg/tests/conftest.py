import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_lines() -> list[str]:
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(set(ACCEPTANCE_LINES), key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)
