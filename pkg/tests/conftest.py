from __future__ import annotations

import itertools
import shutil
from pathlib import Path

import numpy as np
import pytest

from annealinv.ir import load_system

CORPUS = Path(__file__).resolve().parents[1] / "src" / "annealinv" / "corpus"

requires_z3 = pytest.mark.skipif(shutil.which("z3") is None, reason="z3 binary not on PATH")

# acceptance results, printed in the terminal summary
ACCEPTANCE: list[str] = []


def corpus_system(name: str, **kw):
    return load_system((CORPUS / f"{name}.chc").read_text(), **kw)


def grid(lo: int, hi: int, dim: int):
    return itertools.product(range(lo, hi + 1), repeat=dim)


@pytest.fixture
def toy():
    return corpus_system("toy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
