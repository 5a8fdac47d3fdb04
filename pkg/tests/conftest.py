import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from matchcount.model import ObjectRecord, Query, QueryItem  # noqa: E402

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def toy_objects():
    # Three tuples over attributes A, B, C (dims 0, 1, 2).
    return [
        ObjectRecord(0, [(0, 1), (1, 2), (2, 1)]),
        ObjectRecord(1, [(0, 2), (1, 1), (2, 2)]),
        ObjectRecord(2, [(0, 1), (1, 2), (2, 2)]),
    ]


@pytest.fixture
def q1():
    return Query(0, [QueryItem(0, 1, 2), QueryItem(1, 1, 1), QueryItem(2, 2, 3)], k=1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {num:2d}: {detail}")
