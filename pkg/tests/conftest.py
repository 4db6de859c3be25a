import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(capsys):
    """Print one PASS/FAIL line per criterion and keep it for the session summary."""

    def report(number, title, passed, detail, elapsed, limit):
        within = elapsed < limit
        ok = passed and within
        line = (f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {title}: {detail}  "
                f"[{elapsed:.1f} s, limit {limit:g} s{'' if within else ', EXCEEDED'}]")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
