"""Minimizing the discrete cost.

``solve_reduced_halfspace`` handles the two-dimensional single-halfspace
family in closed form; ``solve_Pk`` is the generic penalized single-shooting
solver; ``convergence_study`` runs it over a list of meshes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import qmc

from . import kernels
from .errors import FamilyMismatch, NoFeasibleStart, SweepError
from .problem import BallSet, BoxSet, FiniteSet, IdentityPerturbation, LinearCost, uniform_mesh
from .sweeping import DiscreteQuadruple, ReferenceTrajectory, _union, w12_distance
from .transcription import DiscreteProblem, cost_Jk, feasibility_residuals, localization_sums

# --------------------------------------------------------------------------
# closed form for the single-halfspace family


@dataclass
class Candidate:
    label: str
    u: Optional[np.ndarray]
    eta: Optional[float]
    J: Optional[float]
    admissible: bool


@dataclass
class ReducedSolution:
    u: np.ndarray
    J: float
    eta: float
    candidates: list

    def table(self):
        return [
            {"case": c.label,
             "u1": None if c.u is None else float(c.u[0]),
             "u2": None if c.u is None else float(c.u[1]),
             "eta": c.eta, "J": c.J, "admissible": c.admissible}
            for c in self.candidates
        ]


def _halfspace_family(dp: DiscreteProblem):
    base = dp.base
    if base.n != 2 or base.m != 1 or base.d != 2:
        raise FamilyMismatch("needs n = 2, m = 1, d = 2")
    if base.a_ctrl.kind != "fixed" or base.b_ctrl.kind != "fixed":
        raise FamilyMismatch("moving-set data must be fixed")
    if not isinstance(base.g, IdentityPerturbation):
        raise FamilyMismatch("needs g(x, u) = u")
    if not isinstance(base.U, BoxSet):
        raise FamilyMismatch("needs a box control set")
    if not isinstance(base.phi, LinearCost):
        raise FamilyMismatch("needs a linear terminal cost")
    ell = base.ell
    if getattr(ell, "kind", None) != "diag_quadratic" or ell.u is None or ell.x is not None \
            or ell.xdot is not None or np.any(ell.u <= 0):
        raise FamilyMismatch("needs a positive diagonal quadratic running cost in u only")
    if dp.nu != 2:
        raise FamilyMismatch("the reduced program is stated for two steps")
    return base


def solve_reduced_halfspace(dp: DiscreteProblem, eta_zero=False) -> ReducedSolution:
    """Closed-form optimum of the two-step single-halfspace problem.

    The first step must carry the state exactly onto the boundary line
    (the largest admissible push, attained at a unique box vertex); the
    second step rides the boundary with multiplier
    ``eta = <a, u_1> / |a|^2 >= 0``.  Substituting the state, the cost is a
    separable quadratic in ``u_1`` over the box cut by ``eta >= 0``.  The
    candidates are the interior stationary point, the ``eta = 0`` branch and
    the stationary points on the four box edges.  Costs are the Bolza cost
    without any proximity term (which vanishes when the reference is the
    returned solution).
    """
    base = _halfspace_family(dp)
    a = base.a0[0]
    b = float(base.b0[0])
    x0 = base.x0
    h0, h1 = dp.h
    lo, hi = base.U.lo, base.U.hi
    w = base.ell.u
    c = base.phi.c

    # first step: hitting the line exactly at t_1
    need = (b - a @ x0) / h0
    vert = np.where(a > 0, hi, lo)
    best = a @ vert
    if abs(best - need) > 1e-12 * (1 + abs(need)):
        raise FamilyMismatch("the first step cannot land exactly on the boundary")
    if np.any(np.abs(a) < 1e-15):
        raise FamilyMismatch("landing control is not unique")
    u0 = vert
    x1 = x0 + h0 * u0
    aa = a @ a
    lin = h1 * (c - (c @ a) / aa * a)
    quad = 0.5 * h1 * w
    const = c @ x1 + h0 * 0.5 * (w @ (u0 * u0))

    def J(u):
        return float(quad @ (u * u) + lin @ u + const)

    def eta(u):
        return float(a @ u / aa)

    cands = []
    # interior stationary point
    u_int = -lin / (2 * quad)
    cands.append(("stationary", u_int))
    # eta = 0: minimize on the line <a, u> = 0, u = t * r with r orthogonal to a
    r = np.array([-a[1], a[0]])
    t_star = -(lin @ r) / (2 * quad @ (r * r))
    # clip the line to the box
    t_lo, t_hi = -np.inf, np.inf
    for k in range(2):
        if abs(r[k]) > 0:
            t1, t2 = sorted(((lo[k]) / r[k], (hi[k]) / r[k]))
            t_lo, t_hi = max(t_lo, t1), min(t_hi, t2)
    t0 = float(np.clip(t_star, t_lo, t_hi))
    cands_eta0 = ("eta=0", t0 * r)
    # box edges
    for k in range(2):
        other = 1 - k
        for bound in (lo[k], hi[k]):
            u = np.empty(2)
            u[k] = bound
            u[other] = np.clip(-lin[other] / (2 * quad[other]), lo[other], hi[other])
            cands.append((f"u{k + 1}={bound:g}", u))

    out = []
    for label, u in cands:
        inbox = bool(np.all(u >= lo - 1e-15) and np.all(u <= hi + 1e-15))
        e = eta(u)
        ok = inbox and e >= -1e-15
        out.append(Candidate(label, u, e, J(u) if ok else None, ok))
    u = cands_eta0[1]
    out.append(Candidate("eta=0", u, 0.0, J(u), True))

    pool = [c for c in out if c.admissible and (not eta_zero or c.label == "eta=0")]
    chosen = min(pool, key=lambda c: (c.J, tuple(c.u)))
    U = np.vstack([u0, chosen.u])
    return ReducedSolution(U, chosen.J, chosen.eta, out)


# --------------------------------------------------------------------------
# generic single shooting


@dataclass
class SolveOptions:
    starts: int = 16
    seed: int = 0
    max_sweeps: int = 60
    penalty_start: float = 10.0
    penalty_factor: float = 10.0
    penalty_max: float = 1e6
    xatol: float = 1e-12
    feas_tol: float = 1e-8
    max_evals: int = 2_000_000
    step_bounds: Optional[list] = None
    ab_step_bound: float = 1.0
    use_kernel: bool = True


@dataclass
class SolveResult:
    quadruple: DiscreteQuadruple
    J: float
    history: list
    budget_exceeded: bool
    feasible_starts: int
    residuals: dict = field(default_factory=dict)


class _Shooter:
    """Evaluates the penalized cost of a control vector by explicit shooting."""

    def __init__(self, dp: DiscreteProblem, opts: SolveOptions):
        self.dp = dp
        base = dp.base
        self.base = base
        self.opts = opts
        self.h = dp.h
        self.nu = dp.nu
        self.n, self.m, self.d = base.n, base.m, base.d
        A, B = base.moving_set_on(dp.mesh)
        self.A0, self.B0 = A, B
        self.a_dec, self.b_dec = dp.a_decision, dp.b_decision
        self.nu_u = self.nu * self.d
        self.nu_a = self.nu * self.m * self.n if self.a_dec else 0
        self.nu_b = self.nu * self.m if self.b_dec else 0
        self.size = self.nu_u + self.nu_a + self.nu_b
        self.affine = hasattr(base.g, "affine_coefficients") and opts.use_kernel
        if self.affine:
            self.Gx, self.Gu, self.c = (np.ascontiguousarray(z, dtype=float)
                                        for z in base.g.affine_coefficients())
        self.evals = 0
        self.bounds = self._bounds()
        # no proximity, localization or band terms: cost straight from the arrays
        self.fast = hasattr(base.ell, "vectorized") and not self.a_dec
        self.plan = None if dp.reference is None else _ProximityPlan(dp.mesh, dp.reference)

    def _bounds(self):
        U = self.base.U
        if isinstance(U, BoxSet):
            lo, hi = U.lo, U.hi
        elif isinstance(U, BallSet):
            lo, hi = U.center - U.radius, U.center + U.radius
        elif isinstance(U, FiniteSet):
            lo, hi = U.points.min(axis=0), U.points.max(axis=0)
        else:
            raise ValueError("unsupported control set")
        lo = np.tile(lo, (self.nu, 1))
        hi = np.tile(hi, (self.nu, 1))
        if self.opts.step_bounds is not None:
            for j, (l, u) in enumerate(self.opts.step_bounds):
                lo[j] = np.maximum(lo[j], l)
                hi[j] = np.minimum(hi[j], u)
        pin = self.dp.pinned_u0()
        if pin is not None:
            lo[0] = hi[0] = pin
        r = self.opts.ab_step_bound
        extra = self.nu_a + self.nu_b
        return (np.concatenate([lo.ravel(), -r * np.ones(extra)]),
                np.concatenate([hi.ravel(), r * np.ones(extra)]))

    def split(self, z):
        U = z[: self.nu_u].reshape(self.nu, self.d)
        if isinstance(self.base.U, BallSet):
            U = np.array([self.base.U.project(u) for u in U])
        A, B = self.A0, self.B0
        off = self.nu_u
        if self.a_dec:
            da = z[off: off + self.nu_a].reshape(self.nu, self.m, self.n)
            A = np.concatenate([self.A0[:1], self.A0[0] + np.cumsum(da, axis=0)])
            off += self.nu_a
        if self.b_dec:
            db = z[off: off + self.nu_b].reshape(self.nu, self.m)
            B = np.concatenate([self.B0[:1], self.B0[0] + np.cumsum(db, axis=0)])
        return U, A, B

    def shoot(self, z):
        U, A, B = self.split(z)
        self.evals += 1
        if self.affine:
            X, ETA, viol = kernels.shoot_explicit(np.ascontiguousarray(A), np.ascontiguousarray(B),
                                                  self.base.x0, self.Gx, self.Gu, self.c,
                                                  np.ascontiguousarray(U), self.h, 1e-9, 200)
        else:
            X, ETA, viol = _shoot_generic(self.base.g, A, B, self.base.x0, U, self.h)
        return U, A, B, X, ETA, viol

    def quadruple(self, z):
        U, A, B, X, ETA, viol = self.shoot(z)
        return DiscreteQuadruple(self.dp.mesh, X, A, B, U, ETA), viol

    def violation(self, q, viol):
        extra = 0.0
        if self.dp.reference is not None:
            s1, s2 = localization_sums(self.dp, q)
            half = 0.5 * self.dp.epsilon
            extra += max(0.0, s1 - half) + max(0.0, s2 - half)
        if self.a_dec:
            norms = np.linalg.norm(q.a, axis=2)
            lo, hi = 1.0 - self.dp.delta_k, 1.0 + self.dp.delta_k
            extra += float(np.sum(np.maximum(0.0, lo - norms) + np.maximum(0.0, norms - hi)))
        return viol + extra

    def objective(self, z):
        """Returns ``(J, violation)``."""
        if self.fast:
            U, A, B, X, _, viol = self.shoot(z)
            XD = np.diff(X, axis=0) / self.h[:, None]
            J = self.base.phi(X[-1]) + float(self.h @ self.base.ell.vectorized(X[:-1], U, XD))
            if self.plan is not None:
                prox, s1, s2 = self.plan.evaluate(X, A, B, U)
                J += prox
                half = 0.5 * self.dp.epsilon
                viol += max(0.0, s1 - half) + max(0.0, s2 - half)
            return J, viol
        q, viol = self.quadruple(z)
        return cost_Jk(self.dp, q), self.violation(q, viol)


class _ProximityPlan:
    """Reference data laid out on the union of the mesh and the reference grid.

    Makes the proximity term and both localization sums a handful of array
    operations per evaluation; ``transcription`` computes the same
    quantities from scratch.
    """

    def __init__(self, mesh, ref: ReferenceTrajectory):
        grid = _union(mesh, ref.grid)
        left, right = grid[:-1], grid[1:]
        mid = 0.5 * (left + right)
        self.dt = np.diff(grid)
        self.iq = np.clip(np.searchsorted(mesh, mid, side="right") - 1, 0, mesh.size - 2)
        ir = np.clip(np.searchsorted(ref.grid, mid, side="right") - 1, 0, ref.grid.size - 2)
        N = ref.grid.size - 1
        self.rvel = np.hstack([ref.xdot, ref.adot.reshape(N, -1), ref.bdot])[ir]
        self.ru = ref.u[ir]
        Zr = np.hstack([ref.x, ref.a.reshape(N + 1, -1), ref.b])
        at = lambda ts: np.stack([np.interp(ts, ref.grid, Zr[:, c]) for c in range(Zr.shape[1])], axis=1)
        self.zl, self.zm, self.zr = at(left), at(mid), at(right)
        self.h = np.diff(mesh)

    def evaluate(self, X, A, B, U):
        nu = U.shape[0]
        vel = np.hstack([np.diff(X, axis=0), np.diff(A, axis=0).reshape(nu, -1), np.diff(B, axis=0)])
        vel /= self.h[:, None]
        dv = vel[self.iq] - self.rvel
        du = U[self.iq] - self.ru
        sv = float(self.dt @ np.sum(dv * dv, axis=1))
        su = float(self.dt @ np.sum(du * du, axis=1))
        Z = np.hstack([X, A.reshape(nu + 1, -1), B])[:-1][self.iq]
        f = lambda R: np.sum((Z - R) ** 2, axis=1)
        sx = float(self.dt @ (f(self.zl) + 4.0 * f(self.zm) + f(self.zr))) / 6.0
        return 0.5 * (sv + su), sx + su, sv


def _shoot_generic(g, A, B, x0, U, h):
    nu = U.shape[0]
    n = x0.size
    m = B.shape[1]
    X = np.zeros((nu + 1, n))
    ETA = np.zeros((nu, m))
    X[0] = x0
    viol = 0.0
    for j in range(nu + 1):
        x = X[j]
        slack = A[j] @ x - B[j]
        tol = 1e-9 * (1 + np.linalg.norm(x) + np.linalg.norm(B[j]))
        viol += float(np.sum(np.maximum(slack - tol, 0.0)))
        if j == nu:
            break
        drift = np.asarray(g(x, U[j]), dtype=float)
        act = np.flatnonzero(slack >= -tol)
        step = drift
        if act.size:
            M = np.ascontiguousarray(A[j][act].T)
            eta, _, _ = kernels.min_norm_multipliers(M, drift, 200)
            ETA[j, act] = eta
            step = drift - M @ eta
        X[j + 1] = x + h[j] * step
    return X, ETA, viol


def _key(J, z):
    return (J, tuple(np.round(z, 15)))


def _descend(sh: _Shooter, z, rho, opts, trace):
    """Projected coordinate descent on ``J + rho * violation`` from ``z``."""
    lo, hi = sh.bounds
    finite = isinstance(sh.base.U, FiniteSet)

    def f(zz):
        J, v = sh.objective(zz)
        return J + rho * (v + v * v)

    cur = f(z)
    for sweep in range(opts.max_sweeps):
        start_val = cur
        for k in range(sh.size):
            if sh.evals > opts.max_evals:
                return z, cur, True
            if hi[k] - lo[k] <= 0:
                continue
            if finite and k < sh.nu_u:
                j = k // sh.d
                if k % sh.d:
                    continue
                for p in sh.base.U.points:
                    trial = z.copy()
                    trial[j * sh.d:(j + 1) * sh.d] = p
                    val = f(trial)
                    if val < cur - 1e-15:
                        z, cur = trial, val
                continue

            def line(t, k=k):
                trial = z.copy()
                trial[k] = t
                return f(trial)

            best_t, best_v = z[k], cur
            for t in (lo[k], hi[k]):
                v = line(t)
                if v < best_v:
                    best_t, best_v = t, v
            res = minimize_scalar(line, bounds=(lo[k], hi[k]), method="bounded",
                                  options={"xatol": opts.xatol, "maxiter": 500})
            if res.fun < best_v:
                best_t, best_v = float(res.x), float(res.fun)
            # values only resolve the minimizer to ~sqrt(eps); a three-point
            # parabola recovers the vertex of a locally quadratic cost
            polished = False
            d = 1e-3 * (hi[k] - lo[k])
            if lo[k] < best_t - d and best_t + d < hi[k]:
                fm, fp = line(best_t - d), line(best_t + d)
                curv = fm - 2.0 * best_v + fp
                if curv > 0:
                    t1 = best_t - 0.5 * d * (fp - fm) / curv
                    if abs(t1 - best_t) < d:
                        v1 = line(t1)
                        if v1 <= best_v:
                            best_t, best_v, polished = t1, v1, True
            if best_v < cur - 1e-15 * (1 + abs(cur)) or (polished and best_v <= cur):
                z = z.copy()
                z[k] = best_t
                cur = best_v
        trace.append(cur)
        if start_val - cur <= 1e-15 * (1 + abs(cur)):
            break
    return z, cur, False


def _encode(sh: _Shooter, q: DiscreteQuadruple):
    parts = [q.u.ravel()]
    if sh.a_dec:
        parts.append(np.diff(q.a, axis=0).ravel())
    if sh.b_dec:
        parts.append(np.diff(q.b, axis=0).ravel())
    return np.concatenate(parts)


def solve_Pk(dp: DiscreteProblem, init: DiscreteQuadruple, options: Optional[SolveOptions] = None) -> SolveResult:
    """Penalized single shooting with multi-start projected coordinate descent.

    The starts are the given feasible ``init`` plus ``starts`` points of a
    scrambled Sobol sequence over the control box (seeded).  Each start
    runs coordinate descent on ``J + rho (v + v^2)``, where ``v`` sums the
    state, localization and norm-band violations, with ``rho`` growing
    until ``v`` vanishes; only feasible end points are kept.  Equal costs are broken by the lexicographically smallest control
    vector.  The returned quadruple is always feasible.
    """
    opts = options or SolveOptions()
    sh = _Shooter(dp, opts)
    lo, hi = sh.bounds
    rep = feasibility_residuals(dp, init, opts.feas_tol)
    z0 = _encode(sh, init)
    if not rep["feasible"] or np.any(z0 < lo - 1e-12) or np.any(z0 > hi + 1e-12):
        raise NoFeasibleStart(f"initial guess is infeasible (violation {rep['max_violation']:.3e})")

    starts = [np.clip(z0, lo, hi)]
    if opts.starts > 0:
        dim = sh.size
        sampler = qmc.Sobol(d=dim, scramble=True, seed=opts.seed)
        pts = sampler.random(opts.starts)
        for p in pts:
            z = lo + p * (hi - lo)
            if isinstance(sh.base.U, FiniteSet):
                for j in range(sh.nu):
                    z[j * sh.d:(j + 1) * sh.d] = sh.base.U.sample(p[j * sh.d:(j + 1) * sh.d])
            starts.append(z)

    history = []
    best = None
    feasible_starts = 0
    exceeded = False
    for s, z in enumerate(starts):
        rho = opts.penalty_start
        rounds = []
        while True:
            trace = []
            z, _, hit = _descend(sh, z, rho, opts, trace)
            rounds.append({"rho": float(rho), "trace": [float(t) for t in trace]})
            exceeded |= hit
            J, v = sh.objective(z)
            if v <= opts.feas_tol or rho >= opts.penalty_max or hit:
                break
            rho = min(rho * opts.penalty_factor, opts.penalty_max)
        q, _ = sh.quadruple(z)
        ok = feasibility_residuals(dp, q, opts.feas_tol)["feasible"]
        if ok:
            feasible_starts += 1
            key = _key(J, z)
            if best is None or key < best[0]:
                best = (key, q, J)
        history.append({"start": s, "rounds": rounds, "J": float(J), "feasible": ok,
                        "best": float(best[2]) if best is not None else None})
        if exceeded:
            break
    if best is None:
        best = (None, init, cost_Jk(dp, init))
    q = best[1]
    return SolveResult(q, float(best[2]), history, exceeded, feasible_starts,
                       feasibility_residuals(dp, q, opts.feas_tol))


# --------------------------------------------------------------------------


def prolong(q: DiscreteQuadruple, mesh) -> np.ndarray:
    """Controls of ``q`` carried over to a finer mesh (interval lookup at midpoints)."""
    mesh = np.asarray(mesh, dtype=float)
    mid = 0.5 * (mesh[:-1] + mesh[1:])
    k = np.clip(np.searchsorted(q.mesh, mid, side="right") - 1, 0, q.nu - 1)
    return q.u[k]


STUDY_FIELDS = ["nu", "J", "state_gap", "ab_gap", "u_gap", "feasible", "status"]


def convergence_study(prob, reference: Optional[ReferenceTrajectory], nu_list, options=None,
                      init_controls=None, with_proximity=False):
    """Solve on each mesh of ``nu_list`` and compare with ``reference``.

    The first mesh starts from ``init_controls`` (default: the constant
    projection of 0 onto U); every later mesh is warm-started from the
    previous optimum carried over to the finer mesh.  Rows whose solve
    fails are kept with ``status`` set to the error name.
    """
    from .sweeping import simulate

    rows = []
    prev = None
    for nu in nu_list:
        mesh = uniform_mesh(prob.T, nu)
        dp = DiscreteProblem(prob, mesh, reference if with_proximity else None)
        try:
            if prev is not None:
                u0 = prolong(prev, mesh)
            elif init_controls is not None:
                u0 = np.asarray(init_controls(mesh) if callable(init_controls) else init_controls, dtype=float)
            else:
                u0 = np.tile(prob.U.project(np.zeros(prob.d)), (nu, 1))
            init = simulate(prob, u0, mesh)
            res = solve_Pk(dp, init, options)
            q = res.quadruple
            gaps = w12_distance(q, reference) if reference is not None else \
                {"state": math.nan, "ab": math.nan, "u": math.nan}
            rows.append({"nu": nu, "J": res.J, "state_gap": gaps["state"], "ab_gap": gaps["ab"],
                         "u_gap": gaps["u"], "feasible": res.residuals["feasible"], "status": "ok"})
            prev = q
        except SweepError as exc:
            rows.append({"nu": nu, "J": math.nan, "state_gap": math.nan, "ab_gap": math.nan,
                         "u_gap": math.nan, "feasible": False, "status": type(exc).__name__})
    return rows


def study_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=STUDY_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
