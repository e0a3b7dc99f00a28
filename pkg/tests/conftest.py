import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Acceptance verdicts, printed once at the end of the session.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
