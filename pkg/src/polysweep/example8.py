"""The two-dimensional halfspace example: data, optimum and closed forms.

The constraint is ``x1 + 2 x2 >= 2`` written as ``<a, x> <= b`` with
``a = (-1, -2)`` and ``b = -2``.  With this scaling the multiplier of the
boundary-riding segment is ``1/25``; rescaling the row to unit length
divides every multiplier by ``sqrt(5)``.
"""

from fractions import Fraction as Fr

import numpy as np

from .polyhedra import Polyhedron
from .problem import (
    BoxSet,
    DiagQuadraticRunningCost,
    IdentityPerturbation,
    LinearCost,
    SweepingProblem,
    uniform_mesh,
)

ROW = (-1.0, -2.0)
OFFSET = -2.0
X0 = (1.5, 1.0)

U_FIRST = (-1.0, -1.0)
U_OPT = (-0.4, 0.1)
U_CASE1 = (-1.0 / 3.0, 1.0 / 6.0)
ETA_OPT = 1.0 / 25.0

J_OPT = Fr(441, 200)
J_CASE1 = Fr(53, 24)
X_HALF = (1.0, 0.5)
X_END = (41.0 / 50.0, 59.0 / 100.0)


def problem() -> SweepingProblem:
    return SweepingProblem(
        T=1.0,
        x0=np.array(X0),
        polyhedron=Polyhedron([ROW], [OFFSET]),
        g=IdentityPerturbation(2),
        U=BoxSet([-1.0, -1.0], [1.0, 1.0]),
        phi=LinearCost([1.0, 1.0]),
        ell=DiagQuadraticRunningCost(u=[1.0, 2.0]),
        name="halfspace-example",
    )


def controls(nu=2, second=U_OPT):
    """Piecewise-constant controls switching at ``t = 1/2`` (``nu`` even)."""
    if nu % 2:
        raise ValueError("the switch at t = 1/2 needs an even number of steps")
    half = nu // 2
    return np.array([U_FIRST] * half + [second] * half, dtype=float)


def closed_form_state(t):
    """Optimal arc: free motion to the boundary, then sliding along it."""
    if t < 0.5:
        return np.array([1.5 - t, 1.0 - t])
    s = t - 0.5
    return np.array([1.0 - 9.0 / 25.0 * s, 0.5 + 9.0 / 50.0 * s])


def mesh(nu=2):
    return uniform_mesh(1.0, nu)


def optimal_quadruple(nu=2):
    from .sweeping import simulate

    return simulate(problem(), controls(nu), mesh(nu))


def reference():
    """The optimal process as the reference that the discrete problems approximate."""
    from .sweeping import ReferenceTrajectory

    return ReferenceTrajectory.from_quadruple(optimal_quadruple(2))


def discrete_problem(nu=2, epsilon=1.0, localized=True):
    """Discrete problem on ``nu`` steps, localized around the optimum unless told otherwise."""
    from .transcription import DiscreteProblem

    return DiscreteProblem(problem(), mesh(nu), reference() if localized else None, epsilon)
