import math

import numpy as np
import pytest
from hypothesis import settings
from scipy import integrate

from conecalc.cones import BranchingTriple
from conecalc.measures import Atom, PowerExp, RadonMeasure, exponential

settings.register_profile("conecalc", max_examples=25, deadline=None)
settings.load_profile("conecalc")


def quad_oracle(fn, lo=0.0, hi=math.inf):
    """Independent quadrature oracle: split at 1 and integrate each piece with scipy."""
    pts = [lo, 1.0, hi] if lo < 1.0 < hi else [lo, hi]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, _ = integrate.quad(fn, a, b, limit=400, epsabs=1e-14, epsrel=1e-12)
        total += v
    return total


def corpus_branching():
    """Branching mechanisms used across the suite, with closed-form evaluators."""
    c15 = 0.75 / math.gamma(0.5)
    return [
        ("square", BranchingTriple(0.0, 1.0), lambda q: q * q),
        ("q+q^2", BranchingTriple(1.0, 1.0), lambda q: q + q * q),
        ("atom", BranchingTriple(0.0, 0.0, RadonMeasure.atom(1.0, 1.0)), lambda q: np.exp(-q) - 1 + q),
        ("exp", BranchingTriple(0.0, 0.0, RadonMeasure.family(exponential(1.0, 1.0))), lambda q: q * q / (1 + q)),
        ("q+q^2+exp", BranchingTriple(1.0, 1.0, RadonMeasure.family(exponential(1.0, 1.0))),
         lambda q: q + q * q + q * q / (1 + q)),
        ("q^1.5", BranchingTriple(0.0, 0.0, RadonMeasure.family(PowerExp(-2.5, 0.0, c15))), lambda q: q**1.5),
    ]


@pytest.fixture(params=corpus_branching(), ids=lambda c: c[0])
def branching_case(request):
    return request.param


@pytest.fixture
def qgrid():
    return np.geomspace(1e-2, 1e2, 17)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        verdict, title = results[n]
        terminalreporter.write_line(f"{verdict} criterion {n}: {title}")
