import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ckge.kgstore import sequence_from_named  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_named():
    """Three snapshots; snapshot 2 adds facts among known entities only."""
    return [
        {
            "train": [("a", "p", "b"), ("b", "p", "c"), ("c", "q", "a"), ("a", "q", "d")],
            "valid": [("d", "p", "b")],
            "test": [("b", "q", "d")],
        },
        {
            "train": [("e", "p", "a"), ("f", "q", "e"), ("e", "r", "b")],
            "valid": [("f", "p", "c")],
            "test": [("f", "r", "a")],
        },
        {
            "train": [("a", "r", "c"), ("d", "q", "f")],
            "valid": [("e", "q", "b")],
            "test": [("c", "p", "e")],
        },
    ]


@pytest.fixture
def toy_seq():
    return sequence_from_named(toy_named())


# acceptance criteria report one line each at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
