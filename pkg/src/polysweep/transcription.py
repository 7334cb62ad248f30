"""The discrete Bolza problem on a mesh: cost, constraint residuals and the
proximity integrals against a reference solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import DECISION, SweepingProblem, canonical_json
from .sweeping import DiscreteQuadruple, ReferenceTrajectory, _lookup, _sq_gap, _steps, _union


@dataclass
class DiscreteProblem:
    """A sweeping problem on a fixed mesh.

    ``reference`` is the solution being approximated.  When it is ``None``
    the proximity term, the localization constraints and the pin of the
    initial control are all absent and the problem is the plain discrete
    Bolza problem.
    """

    base: SweepingProblem
    mesh: np.ndarray
    reference: Optional[ReferenceTrajectory] = None
    epsilon: float = 1.0
    delta_k: float = 0.0

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        _steps(self.mesh)
        if abs(self.mesh[0]) > 0 or abs(self.mesh[-1] - self.base.T) > 1e-12 * self.base.T:
            raise ValueError("mesh must run from 0 to T")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.delta_k < 0:
            raise ValueError("delta_k must be nonnegative")

    @property
    def nu(self):
        return self.mesh.size - 1

    @property
    def h(self):
        return np.diff(self.mesh)

    @property
    def a_decision(self):
        return self.base.a_ctrl.kind == DECISION

    @property
    def b_decision(self):
        return self.base.b_ctrl.kind == DECISION

    def pinned_u0(self):
        """The value ``u_0`` is pinned to, or ``None``."""
        if self.reference is None:
            return None
        return self.reference.at(0.0)[3]

    def to_dict(self) -> dict:
        ref = None
        if self.reference is not None:
            r = self.reference
            ref = {"grid": r.grid.tolist(), "x": r.x.tolist(), "a": r.a.tolist(), "b": r.b.tolist(),
                   "u": r.u.tolist(), "xdot": r.xdot.tolist(), "adot": r.adot.tolist(),
                   "bdot": r.bdot.tolist()}
        return {"problem": self.base.to_dict(), "mesh": self.mesh.tolist(), "epsilon": float(self.epsilon),
                "delta_k": float(self.delta_k), "reference": ref}

    @classmethod
    def from_dict(cls, data) -> "DiscreteProblem":
        ref = data.get("reference")
        if ref is not None:
            ref = ReferenceTrajectory(ref["grid"], ref["x"], ref["a"], ref["b"], ref["u"],
                                      ref.get("xdot"), ref.get("adot"), ref.get("bdot"))
        return cls(SweepingProblem.from_dict(data["problem"]), data["mesh"], ref,
                   data.get("epsilon", 1.0), data.get("delta_k", 0.0))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "DiscreteProblem":
        return cls.from_dict(json.loads(text))


def _velocities(q: DiscreteQuadruple):
    nu = q.nu
    return np.hstack([q.xdot(), q.adot().reshape(nu, -1), q.bdot()])


def _ref_velocities(ref: ReferenceTrajectory):
    N = ref.grid.size - 1
    return np.hstack([ref.xdot, ref.adot.reshape(N, -1), ref.bdot])


def running_cost(dp: DiscreteProblem, q: DiscreteQuadruple) -> float:
    """``sum_j h_j ell(t_j, x_j, a_j, b_j, u_j, dx_j/h_j, da_j/h_j, db_j/h_j)``."""
    ell = dp.base.ell
    h = q.h
    xd, ad, bd = q.xdot(), q.adot(), q.bdot()
    if hasattr(ell, "vectorized"):
        return float(h @ ell.vectorized(q.x[:-1], q.u, xd))
    return float(sum(h[j] * ell(q.mesh[j], q.x[j], q.a[j], q.b[j], q.u[j], xd[j], ad[j], bd[j])
                     for j in range(q.nu)))


def proximity_term(dp: DiscreteProblem, q: DiscreteQuadruple) -> float:
    """``1/2 int |(velocities, u) - (reference velocities, reference u)|^2``."""
    if dp.reference is None:
        return 0.0
    ref = dp.reference
    gap = _sq_gap(q.mesh, _velocities(q), ref.grid, _ref_velocities(ref))
    return 0.5 * (gap + _sq_gap(q.mesh, q.u, ref.grid, ref.u))


def cost_Jk(dp: DiscreteProblem, q: DiscreteQuadruple) -> float:
    """Terminal cost plus running cost plus proximity term."""
    return float(dp.base.phi(q.x[-1])) + running_cost(dp, q) + proximity_term(dp, q)


def _nodal_gap_sq(mesh, Zq, ref_grid, Zr):
    """``int |Zq_j - Zr(t)|^2`` with ``Zq`` constant on mesh intervals and ``Zr`` piecewise linear.

    The integrand is quadratic on every interval of the union grid, so
    Simpson's rule there is exact.
    """
    grid = _union(mesh, ref_grid)
    Zq = Zq.reshape(Zq.shape[0], -1)
    Zr = Zr.reshape(Zr.shape[0], -1)
    left, right = grid[:-1], grid[1:]
    mid = 0.5 * (left + right)
    const = _lookup(mesh, Zq[:-1], mid)

    def ref_at(ts):
        return np.stack([np.interp(ts, ref_grid, Zr[:, c]) for c in range(Zr.shape[1])], axis=1)

    f = lambda ts: np.sum((const - ref_at(ts)) ** 2, axis=1)
    return float(np.sum((right - left) / 6.0 * (f(left) + 4.0 * f(mid) + f(right))))


def localization_sums(dp: DiscreteProblem, q: DiscreteQuadruple):
    """The two localization integrals (states/controls and velocities)."""
    if dp.reference is None:
        return 0.0, 0.0
    ref = dp.reference
    nu, N = q.nu, ref.grid.size - 1
    Zq = np.hstack([q.x, q.a.reshape(nu + 1, -1), q.b])
    Zr = np.hstack([ref.x, ref.a.reshape(N + 1, -1), ref.b])
    s1 = _nodal_gap_sq(q.mesh, Zq, ref.grid, Zr) + _sq_gap(q.mesh, q.u, ref.grid, ref.u)
    s2 = _sq_gap(q.mesh, _velocities(q), ref.grid, _ref_velocities(ref))
    return s1, s2


def feasibility_residuals(dp: DiscreteProblem, q: DiscreteQuadruple, tol=1e-8) -> dict:
    """Per-constraint residuals of the discrete problem and an overall verdict.

    Every entry is a nonnegative violation (0 when satisfied) except the
    localization margins, which are ``eps/2 - sum`` and feasible when
    nonnegative.
    """
    base = dp.base
    if q.nu != dp.nu or not np.allclose(q.mesh, dp.mesh, rtol=0, atol=1e-14):
        raise ValueError("quadruple is not on the problem mesh")
    incl = q.inclusion_residuals(base.g)
    slack = np.einsum("jmn,jn->jm", q.a, q.x) - q.b
    support = q.support_violation()
    neg_eta = float(max(0.0, -q.eta.min())) if q.eta.size else 0.0
    u_viol = np.array([base.U.violation(u) for u in q.u])
    ini = {
        "x0": float(np.linalg.norm(q.x[0] - base.x0)),
        "a0": float(np.linalg.norm(q.a[0] - base.a0)),
        "b0": float(np.linalg.norm(q.b[0] - base.b0)),
    }
    pin = dp.pinned_u0()
    if pin is not None:
        ini["u0"] = float(np.linalg.norm(q.u[0] - pin))
    band = 0.0
    if dp.a_decision:
        lo, hi = 1.0 - dp.delta_k, 1.0 + dp.delta_k
        norms = np.linalg.norm(q.a, axis=2)
        band = float(max(0.0, np.max(lo - norms), np.max(norms - hi)))
    s1, s2 = localization_sums(dp, q)
    report = {
        "inclusion": incl.tolist(),
        "inclusion_max": float(incl.max()) if incl.size else 0.0,
        "eta_sign": neg_eta,
        "eta_support": float(support),
        "state": float(max(0.0, slack[:-1].max())) if q.nu else 0.0,
        "endpoint": float(max(0.0, slack[-1].max())),
        "initial": ini,
        "u_set": u_viol.tolist(),
        "u_set_max": float(u_viol.max()) if u_viol.size else 0.0,
        "norm_band": band,
        "localization_states": s1,
        "localization_velocities": s2,
        "localization_margin": [0.5 * dp.epsilon - s1, 0.5 * dp.epsilon - s2],
    }
    worst = max(report["inclusion_max"], neg_eta, support, report["state"], report["endpoint"],
                max(ini.values()), report["u_set_max"], band,
                max(0.0, -report["localization_margin"][0]), max(0.0, -report["localization_margin"][1]))
    report["max_violation"] = float(worst)
    report["feasible"] = bool(worst <= tol)
    return report


def theta_terms(dp: DiscreteProblem, q: DiscreteQuadruple):
    """Per-step integrals ``theta^u, theta^X, theta^A, theta^B`` of the gaps to the reference.

    All zero without a reference.
    """
    nu = q.nu
    m, n = q.a.shape[1], q.a.shape[2]
    if dp.reference is None:
        return (np.zeros_like(q.u), np.zeros((nu, n)), np.zeros((nu, m, n)), np.zeros((nu, m)))
    ref = dp.reference
    h = q.h
    tu = h[:, None] * (q.u - ref.interval_means(q.mesh, "u"))
    tx = h[:, None] * (q.xdot() - ref.interval_means(q.mesh, "xdot"))
    ta = h[:, None, None] * (q.adot() - ref.interval_means(q.mesh, "adot"))
    tb = h[:, None] * (q.bdot() - ref.interval_means(q.mesh, "bdot"))
    return tu, tx, ta, tb
