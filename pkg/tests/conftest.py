import numpy as np
import pytest

from entlab.core import SeededRng
from entlab.data import gen_cipher_corpus


def random_rows(rng, n, V, peaked=False):
    """Random probability rows; ``peaked`` pushes mass toward one token."""
    logits = rng.normal(size=(n, V)) * (4.0 if peaked else 1.0)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@pytest.fixture
def small_corpus():
    return gen_cipher_corpus(6, 40, (2, 5), SeededRng(3))


def pytest_terminal_summary(terminalreporter):
    from helpers import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
