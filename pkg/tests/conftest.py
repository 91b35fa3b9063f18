import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from helpers import ACCEPTANCE_REPORT  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_REPORT):
        terminalreporter.write_line(ACCEPTANCE_REPORT[key])
