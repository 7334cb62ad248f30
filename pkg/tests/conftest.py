import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polysweep import example8 as ex8
from polysweep.polyhedra import Polyhedron
from polysweep.problem import (BoxSet, IdentityPerturbation, LinearCost, SweepingProblem,
                               ZeroRunningCost)
from polysweep.sweeping import ReferenceTrajectory

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def halfspace_problem():
    return ex8.problem()


@pytest.fixture(scope="session")
def optimum():
    return ex8.optimal_quadruple(2)


@pytest.fixture(scope="session")
def localized():
    return ex8.discrete_problem(2)


def boundary_riding_problem():
    """``x2 >= sin t`` with drift ``u = (cos t, -1)``; the exact solution slides along the boundary."""
    return SweepingProblem(T=1.0, x0=np.zeros(2), polyhedron=Polyhedron([[0.0, -1.0]], [0.0]),
                           g=IdentityPerturbation(2), U=BoxSet([-2.0, -2.0], [2.0, 2.0]),
                           phi=LinearCost([0.0, 0.0]), ell=ZeroRunningCost(), name="boundary-riding")


def boundary_riding_reference(N=8192):
    return ReferenceTrajectory.from_functions(
        1.0, N,
        lambda t: [np.sin(t), np.sin(t)],
        lambda t: [[0.0, -1.0]],
        lambda t: [-np.sin(t)],
        lambda t: [np.cos(t), -1.0],
    )


def random_polyhedron(rng, n, m, n_tight=None):
    """Random rows through a known feasible point, some of them tight there."""
    A = rng.normal(size=(m, n))
    x = rng.normal(size=n)
    slack = rng.uniform(0.0, 1.0, size=m)
    k = rng.integers(0, m + 1) if n_tight is None else n_tight
    slack[:k] = 0.0
    return Polyhedron(A, A @ x + slack), x


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
