import numpy as np
import pytest

from lalopt.bench import GeneratorSpec, gen_qcqp
from lalopt.fixtures import linear_quadratic_problem, sphere_problem


@pytest.fixture
def sphere():
    return sphere_problem()


@pytest.fixture
def linquad():
    return linear_quadratic_problem()


@pytest.fixture
def qcqp10():
    return gen_qcqp(GeneratorSpec(10, 3, seed=42))


def random_qcqps(count, sizes=(10, 20, 50), convex=False):
    out = []
    for s in range(count):
        n = sizes[s % len(sizes)]
        m = max(1, (2 * n) // 3)
        out.append(gen_qcqp(GeneratorSpec(n, m, seed=s, convex_curvature=convex)))
    return out


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
