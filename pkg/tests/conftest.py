import numpy as np
import pytest

from ledgfn.diffcore import SeededRng
from ledgfn.envs import BagEnv, SequenceEnv, SetEnv


@pytest.fixture
def rng():
    return SeededRng(1234, 7)


@pytest.fixture
def tiny_bag():
    return BagEnv(entity_types=3, capacity=4, special_repeat=3)


@pytest.fixture
def tiny_set():
    return SetEnv(entity_types=4, capacity=2)


@pytest.fixture
def small_sequence():
    return SequenceEnv(vocab=3, length=4)


def assert_close(a, b, tol=1e-12):
    np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=0, atol=tol)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
