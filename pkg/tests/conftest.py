import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tkgaug import data as D  # noqa: E402

A, B, C = 0, 1, 2
R1, R2 = 0, 1
TOY = [(A, R1, B, 0), (B, R2, C, 0), (A, R1, C, 1), (A, R2, B, 1), (A, R1, B, 2)]

# criterion number -> (passed, detail), filled by the acceptance module
ACCEPTANCE: dict = {}


@pytest.fixture
def toy_facts():
    return list(TOY)


@pytest.fixture
def toy_index():
    return D.build_index(TOY, 3, 2, 3, L_r=3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
