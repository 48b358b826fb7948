import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from resalloc.classes import PNORM_PAIRS, GeneratorSpec, generate
from resalloc.model import CoordinateFunctionPair, PairList, SeparableProblem

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

CLASS_SPECS = [
    ("resource-renewal", None, None),
    ("weighted-p-norm", 2.0, 3.0),
    ("weighted-p-norm", 4.0, 2.5),
    ("sums-of-powers", None, None),
    ("quartic-simplex", None, None),
    ("log-exponential", None, None),
]
CLASS_IDS = [c if p is None else f"{c}-{p:g}-{r:g}" for c, p, r in CLASS_SPECS]


def make(cls, n, seed, p=None, r=None):
    if cls == "weighted-p-norm" and p is None:
        p, r = PNORM_PAIRS[seed % len(PNORM_PAIRS)]
    return generate(GeneratorSpec(cls, n, seed, p, r))


def quad_pair(c):
    """f = (x - c)^2, g = x."""
    return CoordinateFunctionPair(
        f=lambda x: (x - c) ** 2, df=lambda x: 2 * (x - c), d2f=lambda x: 2.0,
        g=lambda x: x, dg=lambda x: 1.0, d2g=lambda x: 0.0,
    )


def quad_problem(centers, l, u, b):
    return SeparableProblem(PairList([quad_pair(c) for c in centers]), l, u, b)


@pytest.fixture
def tiny():
    """n = 1, f = (x - 2)^2, g = x on [0, 1], b = 0.5."""
    return quad_problem([2.0], [0.0], [1.0], 0.5)


@pytest.fixture(params=CLASS_SPECS, ids=CLASS_IDS)
def class_spec(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
