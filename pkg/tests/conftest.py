import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vgibbs import MarkMeasure, PartitionSpec, Region, hard_range, zero_potential
from vgibbs.specification import Model

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_model(d=1, delta=1.0, R=1.0, c=0.05, alpha=None, beta=2.0, eps=1e-3, positive=True, zero=False):
    spec = PartitionSpec(d, delta, R)
    alpha = float(d) if alpha is None else alpha
    mm = MarkMeasure.positive(d, alpha, beta, eps) if positive else MarkMeasure(d, alpha, beta, eps)
    phi = zero_potential(R) if zero else hard_range(c, R)
    return Model(spec, mm, phi)


@pytest.fixture
def spec1():
    return PartitionSpec(1, 1.0, 1.0)


@pytest.fixture
def spec2():
    return PartitionSpec(2, 1.0, 1.0)


@pytest.fixture
def model1():
    """Standard fixture: d=1, delta=R=1, hard range c=0.05, positive marks."""
    return make_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def one_cube(spec, k=None):
    return Region.of(spec, [k if k is not None else (0,) * spec.d])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
