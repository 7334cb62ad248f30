from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polysweep import example8 as ex8
from polysweep.problem import uniform_mesh
from polysweep.sweeping import DiscreteQuadruple, discretize_feasible, simulate
from polysweep.transcription import (DiscreteProblem, cost_Jk, feasibility_residuals, localization_sums,
                                     proximity_term, running_cost, theta_terms)

from conftest import boundary_riding_problem, boundary_riding_reference


def test_cost_at_the_optimum(localized, optimum):
    assert proximity_term(localized, optimum) == 0.0
    assert cost_Jk(localized, optimum) == pytest.approx(2.205, abs=1e-12)
    assert Fraction(cost_Jk(localized, optimum)).limit_denominator(1000) == ex8.J_OPT


def test_cost_hand_integral(optimum):
    # phi = 0.82 + 0.59, running cost 1/2 (1 + 2) / 2 + 1/2 (0.16 + 0.02) / 2
    dp = ex8.discrete_problem(localized=False)
    assert running_cost(dp, optimum) == pytest.approx(0.75 + 0.045, abs=1e-15)
    assert cost_Jk(dp, optimum) == pytest.approx(0.82 + 0.59 + 0.75 + 0.045, abs=1e-12)


def test_cost_of_the_case1_candidate():
    q = simulate(ex8.problem(), ex8.controls(2, ex8.U_CASE1), ex8.mesh(2))
    plain = ex8.discrete_problem(localized=False)
    assert cost_Jk(plain, q) == pytest.approx(53 / 24, abs=1e-12)
    # the proximity term adds half the squared L2 control gap plus the velocity gap
    prox = proximity_term(ex8.discrete_problem(), q)
    assert prox > 0
    assert cost_Jk(ex8.discrete_problem(), q) == pytest.approx(53 / 24 + prox, abs=1e-12)


def test_optimum_is_feasible(localized, optimum):
    rep = feasibility_residuals(localized, optimum)
    assert rep["feasible"]
    assert rep["max_violation"] <= 1e-10
    # nodal states are held on each interval while the reference moves:
    # int_0^1/2 2 t^2 dt + int_0^1/2 (81/625 + 81/2500) s^2 ds
    nodal = 1 / 12 + 81 / 12000
    assert rep["localization_states"] == pytest.approx(nodal, abs=1e-15)
    assert rep["localization_velocities"] == 0.0
    assert rep["localization_margin"][0] == pytest.approx(0.5 - nodal, abs=1e-15)


def test_box_violation_is_reported(localized, optimum):
    u = optimum.u.copy()
    u[1] = [2.0, 0.0]
    q = simulate(ex8.problem(), u, ex8.mesh(2), mode="projective")
    rep = feasibility_residuals(localized, q)
    assert rep["u_set"][1] == pytest.approx(1.0)
    assert rep["u_set"][0] == 0.0
    assert not rep["feasible"]


def test_pinned_initial_control(localized, optimum):
    u = optimum.u.copy()
    u[0] = [-1.0, -0.5]
    q = DiscreteQuadruple(optimum.mesh, optimum.x, optimum.a, optimum.b, u, optimum.eta)
    rep = feasibility_residuals(localized, q)
    assert rep["initial"]["u0"] == pytest.approx(0.5)
    assert "u0" not in feasibility_residuals(ex8.discrete_problem(localized=False), q)["initial"]


def test_localization_sums_of_a_shifted_control(localized, optimum):
    u = optimum.u.copy()
    u[1] += [0.1, 0.0]
    q = DiscreteQuadruple(optimum.mesh, optimum.x, optimum.a, optimum.b, u, optimum.eta)
    s1, s2 = localization_sums(localized, q)
    assert s1 == pytest.approx(1 / 12 + 81 / 12000 + 0.5 * 0.01, abs=1e-15)
    assert s2 == 0.0


def test_theta_vanishes_at_the_reference(localized, optimum):
    for th in theta_terms(localized, optimum):
        np.testing.assert_allclose(th, 0.0, atol=1e-15)


@given(st.floats(-2, 2), st.integers(0, 3))
def test_theta_of_a_constant_shift(c, j):
    dp = ex8.discrete_problem(4)
    q0 = ex8.optimal_quadruple(4)
    u = q0.u.copy()
    u[j, 0] += c
    q = DiscreteQuadruple(q0.mesh, q0.x, q0.a, q0.b, u, q0.eta)
    tu = theta_terms(dp, q)[0]
    expect = np.zeros_like(tu)
    expect[j, 0] = c * 0.25
    np.testing.assert_allclose(tu, expect, atol=1e-15)


def test_theta_without_reference_is_zero(optimum):
    for th in theta_terms(ex8.discrete_problem(localized=False), optimum):
        assert not np.any(th)


def test_json_round_trip_is_byte_identical(localized):
    text = localized.to_json()
    again = DiscreteProblem.from_json(text)
    assert again.to_json() == text
    assert again.pinned_u0().tolist() == [-1.0, -1.0]


def test_mesh_must_span_the_horizon():
    with pytest.raises(ValueError):
        DiscreteProblem(ex8.problem(), [0.0, 0.5])
    with pytest.raises(ValueError):
        DiscreteProblem(ex8.problem(), ex8.mesh(2), epsilon=0.0)


def test_quadruple_on_another_mesh_is_rejected(localized):
    with pytest.raises(ValueError):
        feasibility_residuals(localized, ex8.optimal_quadruple(4))


@pytest.mark.parametrize("seed", range(10))
def test_cost_finite_differences(seed):
    """Interior controls: ``J`` is smooth and its slope matches ``h (c + w u)``."""
    rng = np.random.default_rng(seed)
    nu = 6
    prob = ex8.problem()
    dp = DiscreteProblem(prob, uniform_mesh(1.0, nu))
    u = rng.uniform(0.0, 1.0, size=(nu, 2))          # moving away from the boundary
    j, k = rng.integers(nu), rng.integers(2)
    s = 1e-6

    def J(uu):
        return cost_Jk(dp, simulate(prob, uu, dp.mesh))

    up, dn = u.copy(), u.copy()
    up[j, k] += s
    dn[j, k] -= s
    fd = (J(up) - J(dn)) / (2 * s)
    w = np.array([1.0, 2.0])
    exact = (1.0 / nu) * (1.0 + w[k] * u[j, k])
    assert abs(fd - exact) <= 1e-4 * abs(exact)
    # Lipschitz bound on the unit box: h (|c| + |w| max|u|)
    assert abs(J(up) - J(u)) <= (1.0 / nu) * (1.0 + w[k] * 1.0 + 1e-6) * s


def test_proximity_converges_as_the_reference_is_refined():
    prob = boundary_riding_problem()
    mesh = uniform_mesh(1.0, 8)
    vals = []
    for N in (2048, 4096, 8192, 16384):
        ref = boundary_riding_reference(N)
        q, _ = discretize_feasible(prob, ref, mesh)
        vals.append(proximity_term(DiscreteProblem(prob, mesh, ref), q))
    diffs = np.abs(np.diff(vals))
    assert np.all(diffs[1:] <= diffs[:-1])
