"""Forward simulation of the controlled sweeping inclusion and the constructive
discretization of a feasible continuous-time solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    InfeasibleInput,
    InfeasiblePoint,
    MeshMismatch,
    NotInNormalCone,
    PLICQViolation,
    StepFailure,
)
from .polyhedra import (
    Polyhedron,
    active_set,
    check_plicq,
    default_tol,
    normal_cone_multipliers,
    project,
)

EXPLICIT = "explicit"
PROJECTIVE = "projective"


def _steps(mesh):
    mesh = np.asarray(mesh, dtype=float)
    if mesh.ndim != 1 or mesh.size < 2 or np.any(np.diff(mesh) <= 0):
        raise ValueError("mesh must be strictly increasing with at least two points")
    return np.diff(mesh)


@dataclass
class DiscreteQuadruple:
    """Mesh-indexed ``(x_j, a_j, b_j, u_j)`` with the multipliers ``eta_j``.

    Shapes: ``mesh`` (nu+1,), ``x`` (nu+1, n), ``a`` (nu+1, m, n),
    ``b`` (nu+1, m), ``u`` (nu, d), ``eta`` (nu, m).
    """

    mesh: np.ndarray
    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    hitting_step: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        nu = self.nu
        if self.x.shape[0] != nu + 1 or self.a.shape[0] != nu + 1 or self.b.shape[0] != nu + 1:
            raise ValueError("x, a, b need nu+1 entries")
        if self.u.shape[0] != nu or self.eta.shape[0] != nu:
            raise ValueError("u and eta need nu entries")

    @property
    def nu(self):
        return self.mesh.size - 1

    @property
    def h(self):
        return _steps(self.mesh)

    @property
    def grid(self):
        return self.mesh

    def xdot(self):
        return np.diff(self.x, axis=0) / self.h[:, None]

    def adot(self):
        return np.diff(self.a, axis=0) / self.h[:, None, None]

    def bdot(self):
        return np.diff(self.b, axis=0) / self.h[:, None]

    def polyhedron(self, j):
        return Polyhedron(self.a[j], self.b[j])

    def inclusion_residuals(self, g):
        """``|dx_j/h_j - g(x_j, u_j) + sum_i eta_ij a_ij|`` for every step."""
        xd = self.xdot()
        out = np.empty(self.nu)
        for j in range(self.nu):
            r = xd[j] - g(self.x[j], self.u[j]) + self.a[j].T @ self.eta[j]
            out[j] = np.linalg.norm(r)
        return out

    def max_violation(self):
        """Largest ``<a_ij, x_j> - b_ij`` over all mesh points (nonpositive when feasible)."""
        return float(np.max(np.einsum("jmn,jn->jm", self.a, self.x) - self.b))

    def support_violation(self, tol=None):
        """Largest ``eta_ij`` sitting on a row that is inactive at ``x_j``."""
        worst = 0.0
        for j in range(self.nu):
            slack = self.a[j] @ self.x[j] - self.b[j]
            t = default_tol(self.x[j], self.b[j]) if tol is None else tol
            inactive = slack < -t
            if np.any(inactive):
                worst = max(worst, float(np.max(self.eta[j][inactive])))
        return worst


class StepResult(NamedTuple):
    x: np.ndarray
    eta: np.ndarray


def catching_up_step(P_j: Polyhedron, x_j, u_j, h, g, mode=EXPLICIT, P_next=None,
                     tol=None) -> StepResult:
    """One step of the catching-up scheme.

    Explicit: the drift ``g(x_j, u_j)`` loses its minimum-norm normal
    component on the rows active at ``x_j`` and the state moves by ``h``
    times the remainder.  Projective: the drifted point is projected onto
    ``P_next`` and the multipliers are rescaled by ``1/h``.
    """
    x_j = np.asarray(x_j, dtype=float)
    P_next = P_j if P_next is None else P_next
    drift = np.asarray(g(x_j, u_j), dtype=float)
    if mode == PROJECTIVE:
        proj = project(P_next, x_j + h * drift)
        return StepResult(proj.x, proj.multipliers / h)
    if mode != EXPLICIT:
        raise ValueError(f"unknown mode {mode!r}")
    if tol is None:
        tol = default_tol(x_j, P_j.offsets)
    act = active_set(P_j, x_j, tol).as_array()
    eta = np.zeros(P_j.m)
    if act.size:
        from . import kernels

        M = np.ascontiguousarray(P_j.rows[act].T)
        sol, _, status = kernels.min_norm_multipliers(M, drift, 30 * act.size + 30)
        if status != kernels.OK:
            raise StepFailure("multiplier search exhausted its budget", constraint=int(act[0]))
        eta[act] = sol
    x_next = x_j + h * (drift - P_j.rows.T @ eta)
    slack = P_next.slack(x_next)
    ctol = default_tol(x_next, P_next.offsets)
    bad = np.flatnonzero(slack > ctol)
    if bad.size:
        i = int(bad[np.argmax(slack[bad])])
        raise StepFailure(f"explicit step leaves the set through constraint {i} "
                          f"(excess {slack[i]:.3e})", constraint=i)
    return StepResult(x_next, eta)


def simulate(prob, u, mesh, a=None, b=None, mode=EXPLICIT) -> DiscreteQuadruple:
    """Fold ``catching_up_step`` over the mesh.

    ``a``/``b`` default to the problem's fixed or sampled moving-set data.
    The first step at which some constraint becomes active is recorded as
    ``hitting_step`` (an index into the mesh).
    """
    mesh = np.asarray(mesh, dtype=float)
    h = _steps(mesh)
    nu = h.size
    u = np.asarray(u, dtype=float).reshape(nu, -1)
    if a is None or b is None:
        A_def, B_def = prob.moving_set_on(mesh)
        a = A_def if a is None else a
        b = B_def if b is None else b
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (nu + 1, prob.m, prob.n) or b.shape != (nu + 1, prob.m):
        raise ValueError("moving-set data does not match the mesh")
    X = np.zeros((nu + 1, prob.n))
    ETA = np.zeros((nu, prob.m))
    X[0] = prob.x0
    hit = None
    for j in range(nu):
        Pj = Polyhedron(a[j], b[j])
        if hit is None and len(active_set(Pj, X[j])):
            hit = j
        try:
            X[j + 1], ETA[j] = catching_up_step(Pj, X[j], u[j], h[j], prob.g, mode,
                                                P_next=Polyhedron(a[j + 1], b[j + 1]))
        except StepFailure as exc:
            raise StepFailure(f"step {j}: {exc}", step=j, constraint=exc.constraint) from exc
    if hit is None and len(active_set(Polyhedron(a[nu], b[nu]), X[nu])):
        hit = nu
    return DiscreteQuadruple(mesh, X, a, b, u, ETA, hitting_step=hit)


# --------------------------------------------------------------------------
# sampled continuous data


@dataclass
class ReferenceTrajectory:
    """Sampled continuous-time data on a fine grid.

    ``x``, ``a``, ``b`` are nodal values (piecewise linear in between);
    ``u`` and the derivatives ``xdot``, ``adot``, ``bdot`` are constant on
    each grid interval.  Point evaluation of interval quantities is
    right-continuous.
    """

    grid: np.ndarray
    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    u: np.ndarray
    xdot: Optional[np.ndarray] = None
    adot: Optional[np.ndarray] = None
    bdot: Optional[np.ndarray] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        dt = _steps(self.grid)
        self.x = np.asarray(self.x, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.xdot is None:
            self.xdot = np.diff(self.x, axis=0) / dt[:, None]
        if self.adot is None:
            self.adot = np.diff(self.a, axis=0) / dt[:, None, None]
        if self.bdot is None:
            self.bdot = np.diff(self.b, axis=0) / dt[:, None]
        self.xdot = np.asarray(self.xdot, dtype=float)
        self.adot = np.asarray(self.adot, dtype=float)
        self.bdot = np.asarray(self.bdot, dtype=float)

    @property
    def T(self):
        return float(self.grid[-1])

    @classmethod
    def from_quadruple(cls, q: DiscreteQuadruple) -> "ReferenceTrajectory":
        return cls(q.mesh.copy(), q.x.copy(), q.a.copy(), q.b.copy(), q.u.copy())

    @classmethod
    def from_functions(cls, T, N, x, a, b, u, xdot=None, adot=None, bdot=None):
        """Sample callables of ``t`` on ``N`` equal intervals.

        Interval quantities are sampled at interval midpoints; derivatives
        default to nodal differences.
        """
        grid = np.linspace(0.0, T, N + 1)
        mid = 0.5 * (grid[:-1] + grid[1:])
        ev = lambda f, ts: np.array([np.asarray(f(t), dtype=float) for t in ts])
        return cls(
            grid, ev(x, grid), ev(a, grid), ev(b, grid), ev(u, mid),
            None if xdot is None else ev(xdot, mid),
            None if adot is None else ev(adot, mid),
            None if bdot is None else ev(bdot, mid),
        )

    def _interval(self, t):
        k = int(np.searchsorted(self.grid, t, side="right")) - 1
        return min(max(k, 0), self.grid.size - 2)

    def at(self, t):
        """Nodal-interpolated ``(x, a, b)`` and right-continuous ``(u, xdot, adot, bdot)``."""
        k = self._interval(t)
        t0, t1 = self.grid[k], self.grid[k + 1]
        s = (t - t0) / (t1 - t0)
        lin = lambda V: (1 - s) * V[k] + s * V[k + 1]
        return lin(self.x), lin(self.a), lin(self.b), self.u[k], self.xdot[k], self.adot[k], self.bdot[k]

    def interval_means(self, mesh, which="u"):
        """Means of an interval-constant quantity over each ``[t_j, t_{j+1}]`` of ``mesh``."""
        vals = getattr(self, which)
        flat = vals.reshape(vals.shape[0], -1)
        dt = np.diff(self.grid)
        cum = np.vstack([np.zeros(flat.shape[1]), np.cumsum(flat * dt[:, None], axis=0)])
        mesh = np.asarray(mesh, dtype=float)
        at = np.stack([np.interp(mesh, self.grid, cum[:, c]) for c in range(flat.shape[1])], axis=1)
        means = np.diff(at, axis=0) / np.diff(mesh)[:, None]
        return means.reshape((mesh.size - 1,) + vals.shape[1:])

    def inclusion_residual(self, g):
        """Largest distance of ``-xdot + g`` from the normal cone at the left node of each interval."""
        cache = self.__dict__.setdefault("_residual_cache", {})
        if id(g) not in cache:
            cache[id(g)] = (g, self._inclusion_residual(g))
        return cache[id(g)][1]

    def _inclusion_residual(self, g):
        worst = 0.0
        for k in range(self.grid.size - 1):
            P = Polyhedron(self.a[k], self.b[k])
            v = -self.xdot[k] + g(self.x[k], self.u[k])
            act = active_set(P, self.x[k]).as_array()
            if act.size == 0:
                worst = max(worst, float(np.linalg.norm(v)))
                continue
            from . import kernels

            _, rn, _ = kernels.nnls(np.ascontiguousarray(P.rows[act].T), v, 30 * act.size + 30)
            worst = max(worst, float(rn))
        return worst


# --------------------------------------------------------------------------


class DiscretizationDiagnostics(NamedTuple):
    mu: float
    delta: float
    w12: dict
    theta_bound: Optional[float]
    eta_nodes: np.ndarray
    active_preserved: bool


def discretize_feasible(prob, ref: ReferenceTrajectory, mesh, lipschitz=None, growth=None,
                        variation=None, tol=None):
    """Discrete feasible quadruple built from a feasible continuous solution.

    Controls ``u`` and row velocities are replaced by their interval means,
    ``a`` is integrated from them, the offsets ``b`` are shifted so that every
    mesh point keeps the reference slacks (hence the reference active sets),
    the reference normal-cone multipliers are recovered at each mesh point
    and ``x`` follows by Euler steps with the resulting velocities.

    The a-priori state bound is reported only when the constants
    ``lipschitz`` (L of g), ``growth`` (M of g) and ``variation`` (K) are
    all given.  Returns ``(quadruple, diagnostics)``.
    """
    mesh = np.asarray(mesh, dtype=float)
    h = _steps(mesh)
    nu = h.size
    if abs(mesh[-1] - ref.T) > 1e-12 * max(1.0, ref.T) or mesh[0] != ref.grid[0]:
        raise InfeasibleInput("mesh must span the reference time interval")
    n, m = prob.n, prob.m
    try:
        resid = ref.inclusion_residual(prob.g)
    except InfeasiblePoint as exc:
        raise InfeasibleInput(f"reference state leaves the moving set: {exc}") from exc
    if resid > (1e-7 if tol is None else tol) * (1 + np.abs(ref.xdot).max()):
        raise InfeasibleInput("reference data violates the sweeping inclusion")

    u_k = ref.interval_means(mesh, "u")
    alpha = ref.interval_means(mesh, "adot")
    a_k = np.empty((nu + 1, m, n))
    a_k[0] = ref.a[0]
    a_k[1:] = ref.a[0] + np.cumsum(alpha * h[:, None, None], axis=0)

    x_k = np.empty((nu + 1, n))
    b_k = np.empty((nu + 1, m))
    eta_nodes = np.zeros((nu + 1, m))
    eta_k = np.zeros((nu, m))
    x_k[0] = ref.x[0]
    preserved = True
    for j in range(nu + 1):
        xr, ar, br, ur, xdr, _, _ = ref.at(mesh[j])
        b_k[j] = a_k[j] @ x_k[j] + br - ar @ xr
        Pr = Polyhedron(ar, br)
        act_ref = active_set(Pr, xr).indices
        act_k = active_set(Polyhedron(a_k[j], b_k[j]), x_k[j], default_tol(xr, br)).indices
        preserved &= act_ref == act_k
        if act_ref and not check_plicq(Pr, xr).holds:
            raise PLICQViolation(f"PLICQ fails for the reference at t = {mesh[j]:g}")
        try:
            eta_nodes[j] = normal_cone_multipliers(Pr, xr, -xdr + prob.g(xr, ur),
                                                   default_tol(xr, br, xdr) * 100)
        except NotInNormalCone as exc:
            raise PLICQViolation(f"multiplier recovery fails at t = {mesh[j]:g}: {exc}") from exc
        if j == nu:
            break
        eta_k[j] = eta_nodes[j]
        v = prob.g(x_k[j], u_k[j]) - a_k[j].T @ eta_nodes[j]
        x_k[j + 1] = x_k[j] + h[j] * v

    q = DiscreteQuadruple(mesh, x_k, a_k, b_k, u_k, eta_k)
    T = mesh[-1] - mesh[0]
    gap_u = _sq_gap(ref.grid, ref.u, mesh, u_k)
    gap_a = _sq_gap(ref.grid, ref.adot, mesh, alpha)
    mu = max(gap_u, gap_a)
    delta = float(np.sqrt(n * mu * T))
    w12 = w12_distance(q, ref)
    bound = None
    if lipschitz is not None and growth is not None and variation is not None:
        from .polyhedra import inverse_triangle_constant

        L, M, K = float(lipschitz), float(growth), float(variation)
        gamma = 1.0
        seen = {}
        for k in range(ref.grid.size):
            P = Polyhedron(ref.a[k], ref.b[k])
            act = active_set(P, ref.x[k]).indices
            key = (act, P.rows[list(act)].round(12).tobytes())
            if key not in seen:
                seen[key] = inverse_triangle_constant(P, ref.x[k])
            gamma = max(gamma, seen[key])
        M1 = float(np.linalg.norm(ref.xdot[0])) + K
        M2 = gamma * M1 + gamma * M * (1 + float(np.max(np.linalg.norm(ref.x, axis=1))))
        hk = float(h.max())
        nu_tilde = hk * nu
        bound = float(np.exp(L * nu_tilde) * ((hk * K + nu_tilde * 2.0 ** (-nu)) * (L + 1)
                                              + L * np.sqrt(T * mu) + M2 * m * nu_tilde * delta))
    return q, DiscretizationDiagnostics(mu, delta, w12, bound, eta_nodes, bool(preserved))


# --------------------------------------------------------------------------
# distances


def _lookup(grid, vals, points):
    k = np.clip(np.searchsorted(grid, points, side="right") - 1, 0, grid.size - 2)
    return vals[k]


def _union(g1, g2):
    g = np.union1d(g1, g2)
    keep = np.concatenate([[True], np.diff(g) > 1e-14 * max(1.0, abs(g[-1]))])
    return g[keep]


def _sq_gap(g1, v1, g2, v2):
    """Exact integral of the squared gap between two interval-constant functions."""
    grid = _union(g1, g2)
    mid = 0.5 * (grid[:-1] + grid[1:])
    d = _lookup(g1, v1, mid) - _lookup(g2, v2, mid)
    d = d.reshape(d.shape[0], -1)
    return float(np.sum(np.diff(grid) * np.sum(d * d, axis=1)))


def _pieces(obj):
    if isinstance(obj, DiscreteQuadruple):
        return obj.mesh, obj.x, obj.a, obj.b, obj.u, obj.xdot(), obj.adot(), obj.bdot()
    return obj.grid, obj.x, obj.a, obj.b, obj.u, obj.xdot, obj.adot, obj.bdot


def w12_distance(q1, q2, resample=True) -> dict:
    """``W^{1,2}`` gaps of the state and of ``(a, b)`` plus the ``L^2`` control gap.

    The ``W^{1,2}`` norm used is ``|z(0)| + (int |z'|^2)^{1/2}``.  Interval
    quantities are compared exactly on the union of the two grids.
    """
    g1, x1, a1, b1, u1, xd1, ad1, bd1 = _pieces(q1)
    g2, x2, a2, b2, u2, xd2, ad2, bd2 = _pieces(q2)
    same = g1.size == g2.size and np.allclose(g1, g2, rtol=0, atol=1e-14)
    if not same and not resample:
        raise MeshMismatch("grids differ and resampling is disabled")
    if abs(g1[-1] - g2[-1]) > 1e-12 * max(1.0, abs(g1[-1])) or g1[0] != g2[0]:
        raise MeshMismatch("grids cover different time intervals")
    state = float(np.linalg.norm(x1[0] - x2[0]) + np.sqrt(_sq_gap(g1, xd1, g2, xd2)))
    ab0 = np.concatenate([(a1[0] - a2[0]).ravel(), b1[0] - b2[0]])
    ab = float(np.linalg.norm(ab0) + np.sqrt(_sq_gap(g1, ad1, g2, ad2) + _sq_gap(g1, bd1, g2, bd2)))
    ugap = float(np.sqrt(_sq_gap(g1, u1, g2, u2)))
    return {"state": state, "ab": ab, "u": ugap}
