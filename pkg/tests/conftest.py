import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from designlab.population import FinitePopulation

DATA = Path(__file__).parent / "data"


def random_rational_population(rng, n, strata=None, clusters=None, den=6, lo=-12, hi=12):
    """Population with outcomes k/den, k uniform on [lo, hi]."""
    y1 = [Fraction(int(k), den) for k in rng.integers(lo, hi + 1, size=n)]
    y0 = [Fraction(int(k), den) for k in rng.integers(lo, hi + 1, size=n)]
    return FinitePopulation(y1, y0, strata=strata, clusters=clusters)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def example_n4():
    return FinitePopulation([1, 2, 3, 4], [0, 0, 0, 0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
