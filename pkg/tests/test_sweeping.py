import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from polysweep import example8 as ex8
from polysweep.errors import InfeasibleInput, MeshMismatch, StepFailure
from polysweep.polyhedra import Polyhedron, active_set
from polysweep.problem import (BoxSet, DiagQuadraticRunningCost, IdentityPerturbation, LinearCost,
                               SweepingProblem, ZeroRunningCost, uniform_mesh)
from polysweep.sweeping import (EXPLICIT, PROJECTIVE, DiscreteQuadruple, ReferenceTrajectory,
                                catching_up_step, discretize_feasible, simulate, w12_distance)

from conftest import boundary_riding_problem, boundary_riding_reference

P8 = Polyhedron([[-1.0, -2.0]], [-2.0])
G = IdentityPerturbation(2)


def test_step_free_motion_to_the_boundary():
    s = catching_up_step(P8, [1.5, 1.0], [-1.0, -1.0], 0.5, G)
    np.testing.assert_array_equal(s.x, [1.0, 0.5])
    np.testing.assert_array_equal(s.eta, [0.0])


def test_step_sliding_on_the_boundary():
    s = catching_up_step(P8, [1.0, 0.5], [-0.4, 0.1], 0.5, G)
    np.testing.assert_allclose(s.x, [41 / 50, 59 / 100], atol=1e-15)
    np.testing.assert_allclose(s.eta, [1 / 25], atol=1e-15)


def test_step_interior():
    s = catching_up_step(P8, [3.0, 3.0], [0.2, -0.1], 0.1, G)
    np.testing.assert_allclose(s.x, [3.02, 2.99], atol=1e-15)
    assert s.eta[0] == 0.0


@pytest.mark.parametrize("mode", [EXPLICIT, PROJECTIVE])
def test_step_modes_agree_on_the_sliding_step(mode):
    s = catching_up_step(P8, [1.0, 0.5], [-0.4, 0.1], 0.5, G, mode=mode)
    np.testing.assert_allclose(s.x, [0.82, 0.59], atol=1e-14)
    np.testing.assert_allclose(s.eta, [0.04], atol=1e-14)


def test_explicit_step_overshoot_is_reported():
    with pytest.raises(StepFailure) as err:
        catching_up_step(P8, [1.5, 1.0], [-1.0, -1.0], 1.0, G)
    assert err.value.constraint == 0


def test_simulate_optimal_controls(optimum):
    np.testing.assert_allclose(optimum.x, [[1.5, 1.0], [1.0, 0.5], [0.82, 0.59]], atol=1e-15)
    np.testing.assert_allclose(optimum.eta, [[0.0], [0.04]], atol=1e-15)
    assert optimum.hitting_step == 1
    for t in np.linspace(0, 1, 3):
        np.testing.assert_allclose(optimum.x[int(round(2 * t))], ex8.closed_form_state(t), atol=1e-15)


def test_simulate_case1_stays_on_the_boundary():
    q = simulate(ex8.problem(), ex8.controls(2, ex8.U_CASE1), ex8.mesh(2))
    assert abs(q.x[-1] @ [1.0, 2.0] - 2.0) <= 1e-12
    assert abs(q.eta[1, 0]) <= 1e-15


def test_simulate_zero_perturbation_is_constant():
    from polysweep.problem import AffinePerturbation

    prob = SweepingProblem(T=1.0, x0=np.array([3.0, 3.0]), polyhedron=P8,
                           g=AffinePerturbation(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2)),
                           U=BoxSet([-1, -1], [1, 1]), phi=LinearCost([1.0, 1.0]), ell=ZeroRunningCost())
    q = simulate(prob, np.full((7, 2), 0.5), uniform_mesh(1.0, 7))
    np.testing.assert_array_equal(q.x, np.tile([3.0, 3.0], (8, 1)))
    assert q.hitting_step is None


@pytest.mark.parametrize("nu", [2, 4, 8, 16])
def test_simulation_modes_agree(nu):
    prob = ex8.problem()
    qe = simulate(prob, ex8.controls(nu), ex8.mesh(nu), mode=EXPLICIT)
    qp = simulate(prob, ex8.controls(nu), ex8.mesh(nu), mode=PROJECTIVE)
    np.testing.assert_allclose(qe.x, qp.x, atol=1e-12)
    np.testing.assert_allclose(qe.eta, qp.eta, atol=1e-12)
    np.testing.assert_allclose(qe.x[-1], [0.82, 0.59], atol=1e-12)


box_controls = st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=12)


@given(box_controls)
def test_explicit_runs_satisfy_the_discrete_inclusion(us):
    prob = ex8.problem()
    try:
        q = simulate(prob, np.array(us), uniform_mesh(1.0, len(us)))
    except StepFailure:
        assume(False)
    assert q.max_violation() <= 1e-9
    assert np.all(q.eta >= 0)
    assert q.support_violation() <= 1e-9
    assert np.max(q.inclusion_residuals(prob.g)) <= 1e-9


@given(box_controls)
def test_projective_runs_stay_feasible(us):
    """Projective multipliers live on the rows active at the new state."""
    prob = ex8.problem()
    q = simulate(prob, np.array(us), uniform_mesh(1.0, len(us)), mode=PROJECTIVE)
    assert np.all(q.x @ np.array([-1.0, -2.0]) <= -2.0 + 1e-12)
    assert np.all(q.eta >= 0)
    for j in range(q.nu):
        inactive = np.setdiff1d(np.arange(1), active_set(P8, q.x[j + 1]).as_array())
        assert np.all(q.eta[j, inactive] == 0)
    step = q.x[1:] - q.x[:-1] - q.h[:, None] * (np.array(us) - q.eta @ P8.rows)
    assert np.abs(step).max() <= 1e-12


@given(box_controls)
def test_simulate_energy_bound(us):
    """The velocity never exceeds the drift: ``|x_{j+1} - x_j| <= h |g|`` (normal part removed)."""
    us = np.array(us)
    q = simulate(ex8.problem(), us, uniform_mesh(1.0, len(us)), mode=PROJECTIVE)
    speed = np.linalg.norm(q.xdot(), axis=1)
    assert np.all(speed <= np.linalg.norm(us, axis=1) + 1e-12)


def test_quadruple_shapes_are_checked():
    with pytest.raises(ValueError):
        DiscreteQuadruple([0, 1], np.zeros((3, 2)), np.zeros((2, 1, 2)), np.zeros((2, 1)),
                          np.zeros((1, 2)), np.zeros((1, 1)))


def test_discretize_reproduces_the_discrete_optimum(optimum):
    ref = ex8.reference()
    q, diag = discretize_feasible(ex8.problem(), ref, ex8.mesh(2))
    np.testing.assert_allclose(q.x, optimum.x, atol=1e-15)
    np.testing.assert_allclose(q.u, optimum.u, atol=1e-15)
    np.testing.assert_allclose(q.eta, optimum.eta, atol=1e-15)
    assert diag.mu <= 1e-30 and diag.delta <= 1e-15
    assert diag.active_preserved
    assert max(diag.w12.values()) <= 1e-15


def test_discretize_interior_is_the_euler_polygon():
    prob = ex8.problem()
    u = np.array([0.3, 0.2])
    T, N = 1.0, 64
    ref = ReferenceTrajectory.from_functions(
        T, N, lambda t: [1.5 + 0.3 * t, 1.0 + 0.2 * t], lambda t: [[-1.0, -2.0]], lambda t: [-2.0],
        lambda t: u)
    q, diag = discretize_feasible(prob, ref, uniform_mesh(1.0, 8))
    np.testing.assert_allclose(q.x[-1], [1.8, 1.2], atol=1e-14)
    assert np.all(q.eta == 0)


def test_discretize_rejects_an_infeasible_reference():
    ref = ReferenceTrajectory.from_functions(
        1.0, 32, lambda t: [1.5 - t, 1.0 - t], lambda t: [[-1.0, -2.0]], lambda t: [-2.0],
        lambda t: [-1.0, -1.0])
    with pytest.raises(InfeasibleInput):
        discretize_feasible(ex8.problem(), ref, uniform_mesh(1.0, 4))


@pytest.fixture(scope="module")
def riding():
    return boundary_riding_problem(), boundary_riding_reference(4096)


def test_discretize_converges_on_a_boundary_riding_solution(riding):
    prob, ref = riding
    gaps = []
    for nu in (8, 16, 32, 64):
        q, diag = discretize_feasible(prob, ref, np.linspace(0, 1, nu + 1))
        assert diag.active_preserved
        gaps.append(diag.w12["state"])
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all(ratios >= 1.5), ratios


def test_a_priori_bound_needs_all_constants(riding):
    prob, ref = riding
    _, diag = discretize_feasible(prob, ref, np.linspace(0, 1, 9))
    assert diag.theta_bound is None
    _, diag = discretize_feasible(prob, ref, np.linspace(0, 1, 9), lipschitz=0, growth=1, variation=2)
    assert np.isfinite(diag.theta_bound) and diag.theta_bound > 0


def test_w12_identical():
    q = ex8.optimal_quadruple(2)
    assert w12_distance(q, q) == {"state": 0.0, "ab": 0.0, "u": 0.0}


@given(st.floats(-3, 3), st.integers(1, 7))
def test_w12_shifted_control(c, k):
    q1 = ex8.optimal_quadruple(8)
    u2 = q1.u.copy()
    u2[:k, 0] += c
    q2 = DiscreteQuadruple(q1.mesh, q1.x, q1.a, q1.b, u2, q1.eta)
    assert w12_distance(q1, q2)["u"] == pytest.approx(abs(c) * np.sqrt(k / 8), abs=1e-12)


def test_w12_optimum_against_case1():
    q1 = ex8.optimal_quadruple(2)
    q2 = simulate(ex8.problem(), ex8.controls(2, ex8.U_CASE1), ex8.mesh(2))
    assert w12_distance(q1, q2)["u"] == pytest.approx(1 / 15, abs=1e-15)


def test_w12_resampling():
    q2 = ex8.optimal_quadruple(2)
    q4 = ex8.optimal_quadruple(4)
    assert max(w12_distance(q2, q4).values()) <= 1e-15
    with pytest.raises(MeshMismatch):
        w12_distance(q2, q4, resample=False)
