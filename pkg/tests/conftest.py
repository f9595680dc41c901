import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; returns whether it passed."""
    def record(number: int, passed, detail: str = "", status: str | None = None) -> bool:
        status = status or ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {status}  {detail}".rstrip()
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
