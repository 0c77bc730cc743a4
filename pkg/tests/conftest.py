import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nambu.skewtensor import SkewTensor3, generalized_E, levi_civita  # noqa: E402

CORPUS = Path(__file__).resolve().parents[1] / "src" / "nambu" / "corpus"
DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def eps():
    return levi_civita()


@pytest.fixture
def e6():
    """Two canonical triplets on consecutive coordinates (x1,x2,x3), (x4,x5,x6)."""
    return generalized_E(2, layout="block")


@pytest.fixture
def r6():
    """d1 ^ (d2 ^ d3 + d4 ^ d5) on R^6."""
    return SkewTensor3.from_entries(6, [(0, 1, 2, 1.0), (0, 3, 4, 1.0)])


@pytest.fixture
def corpus():
    return CORPUS


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(number, ok, detail)`` records one acceptance line for the summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
