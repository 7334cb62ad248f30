"""Moving-set geometry for polyhedra ``C = {x : <a_i, x> <= b_i}``.

Activity classification, Euclidean projection, recovery of normal-cone
multipliers and the constraint-qualification checks (PLICQ, LICQ, Slater,
inverse triangle inequality) that the rest of the package relies on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .errors import EmptyPolyhedron, InfeasiblePoint, NotInNormalCone

ACTIVITY_RTOL = 1e-9


def default_tol(x, b, *extra) -> float:
    """Scaled activity tolerance ``1e-9 (1 + |x| + |b| + ...)``."""
    total = 1.0 + np.linalg.norm(x) + np.linalg.norm(b)
    for e in extra:
        total += np.linalg.norm(e)
    return ACTIVITY_RTOL * total


@dataclass(frozen=True)
class Polyhedron:
    """Feasible set ``{x : rows @ x <= offsets}``.

    ``norm_band`` is an optional ``(lo, hi)`` interval that every row norm
    must fall in; it is checked at construction.
    """

    rows: np.ndarray
    offsets: np.ndarray
    norm_band: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, ndmin=2)
        offsets = np.array(self.offsets, dtype=float, ndmin=1)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError("rows must be a non-empty (m, n) array")
        if offsets.shape != (rows.shape[0],):
            raise ValueError(f"offsets must have shape ({rows.shape[0]},), got {offsets.shape}")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(offsets))):
            raise ValueError("polyhedron data must be finite")
        band = self.norm_band
        if band is not None:
            lo, hi = float(band[0]), float(band[1])
            if not lo <= hi:
                raise ValueError("norm band must satisfy lo <= hi")
            norms = np.linalg.norm(rows, axis=1)
            if np.any(norms == 0.0):
                raise ValueError("zero rows are not allowed with a norm band")
            slack = 1e-12 * max(1.0, hi)
            bad = np.flatnonzero((norms < lo - slack) | (norms > hi + slack))
            if bad.size:
                raise ValueError(f"rows {bad.tolist()} violate the norm band [{lo}, {hi}]")
            band = (lo, hi)
        rows.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "norm_band", band)

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def slack(self, x) -> np.ndarray:
        """``<a_i, x> - b_i`` for every row (nonpositive on ``C``)."""
        return self.rows @ np.asarray(x, dtype=float) - self.offsets

    def contains(self, x, tol=None) -> bool:
        x = np.asarray(x, dtype=float)
        if tol is None:
            tol = default_tol(x, self.offsets)
        return bool(np.all(self.slack(x) <= tol))

    def to_dict(self) -> dict:
        return {
            "rows": self.rows.tolist(),
            "offsets": self.offsets.tolist(),
            "norm_band": None if self.norm_band is None else list(self.norm_band),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Polyhedron":
        band = data.get("norm_band")
        return cls(data["rows"], data["offsets"], None if band is None else tuple(band))


@dataclass(frozen=True)
class ActiveSet:
    indices: Tuple[int, ...]
    tolerance: float

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int)


class Projection(NamedTuple):
    x: np.ndarray
    multipliers: np.ndarray


class PLICQResult(NamedTuple):
    holds: bool
    certificate: Optional[np.ndarray]
    licq: bool
    active: ActiveSet


class SlaterResult(NamedTuple):
    theta: float
    point: Optional[np.ndarray]
    unbounded: bool

    @property
    def holds(self) -> bool:
        return self.unbounded or self.theta < 0.0


def active_set(P: Polyhedron, x, tol=None) -> ActiveSet:
    """Indices with ``|<a_i, x> - b_i| <= tol``.

    Raises ``InfeasiblePoint`` when some constraint is violated by more than
    ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if tol is None:
        tol = default_tol(x, P.offsets)
    s = P.slack(x)
    bad = np.flatnonzero(s > tol)
    if bad.size:
        i = int(bad[0])
        raise InfeasiblePoint(f"constraint {i} violated by {s[i]:.3e} (tol {tol:.1e})")
    return ActiveSet(tuple(int(i) for i in np.flatnonzero(np.abs(s) <= tol)), float(tol))


def project(P: Polyhedron, y, tol=1e-12, maxiter=None) -> Projection:
    """Euclidean projection of ``y`` onto ``P`` with its KKT multipliers.

    The multipliers satisfy ``y - x = rows.T @ mu``, ``mu >= 0`` and
    complementarity with the slack at ``x``.
    """
    y = np.asarray(y, dtype=float)
    if maxiter is None:
        maxiter = 20 * (P.m + P.n) + 100
    scale = 1.0 + np.max(np.abs(y)) + np.max(np.abs(P.offsets))
    x, mu, _, status = kernels.project_qp(
        P.rows, P.offsets, y, np.zeros((0, P.n)), np.zeros(0), tol * scale, maxiter
    )
    if status == kernels.INFEASIBLE:
        raise EmptyPolyhedron("active-set solve detected an empty polyhedron")
    if status == kernels.MAXITER:
        raise EmptyPolyhedron("active-set solve did not terminate; polyhedron may be empty")
    return Projection(x, mu)


def project_enumerate(P: Polyhedron, y, tol=1e-9) -> Projection:
    """Brute-force projection: try every subset of constraints as the active set.

    Exponential in ``m``; meant as an independent check for small problems.
    """
    y = np.asarray(y, dtype=float)
    A, b = P.rows, P.offsets
    best = None
    best_dist = np.inf
    ftol = tol * (1.0 + np.abs(b).max() + np.abs(y).max())
    for size in range(0, min(P.m, P.n) + 1):
        for S in itertools.combinations(range(P.m), size):
            S = list(S)
            if S:
                AS = A[S]
                # x = y - AS^T mu with AS x = bS
                mu_S, *_ = np.linalg.lstsq(AS @ AS.T, AS @ y - b[S], rcond=None)
                x = y - AS.T @ mu_S
                if np.max(np.abs(AS @ x - b[S])) > ftol:
                    continue
                if np.any(mu_S < -ftol):
                    continue
            else:
                mu_S = np.zeros(0)
                x = y.copy()
            if np.any(A @ x - b > ftol):
                continue
            dist = np.linalg.norm(x - y)
            if dist < best_dist - 1e-14:
                mu = np.zeros(P.m)
                mu[S] = np.maximum(mu_S, 0.0)
                best, best_dist = Projection(x, mu), dist
    if best is None:
        raise EmptyPolyhedron("no active subset yields a feasible projection")
    return best


def normal_cone_multipliers(P: Polyhedron, x, v, tol=None) -> np.ndarray:
    """Nonnegative ``eta`` on the active rows with ``sum eta_i a_i = v``.

    Minimum-norm among exact fits.  Raises ``NotInNormalCone`` when the
    best nonnegative fit misses ``v`` by more than ``tol``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if tol is None:
        tol = default_tol(x, P.offsets, v)
    act = active_set(P, x, tol).as_array()
    eta = np.zeros(P.m)
    if act.size == 0:
        if np.linalg.norm(v) > tol:
            raise NotInNormalCone(f"x is interior but |v| = {np.linalg.norm(v):.3e}")
        return eta
    M = np.ascontiguousarray(P.rows[act].T)
    sol, rnorm, _ = kernels.min_norm_multipliers(M, v, 30 * act.size + 30)
    if rnorm > tol:
        raise NotInNormalCone(f"nonnegative fit residual {rnorm:.3e} exceeds tol {tol:.1e}")
    eta[act] = sol
    return eta


def check_plicq(P: Polyhedron, x, tol=None) -> PLICQResult:
    """Positive linear independence of the active rows at ``x``.

    Decided by ``max sum(alpha)`` over ``alpha >= 0``, ``sum alpha_i a_i = 0``,
    ``sum(alpha) <= 1``; the optimum is 0 exactly when PLICQ holds.  Zero
    rows never enter the certificate.
    """
    act = active_set(P, x, tol)
    idx = [i for i in act.indices if np.linalg.norm(P.rows[i]) > 0.0]
    if not idx:
        return PLICQResult(True, None, True, act)
    AS = P.rows[idx]
    licq = bool(np.linalg.matrix_rank(AS) == len(idx))
    k = len(idx)
    res = linprog(
        -np.ones(k),
        A_ub=np.ones((1, k)),
        b_ub=[1.0],
        A_eq=AS.T,
        b_eq=np.zeros(P.n),
        bounds=[(0, None)] * k,
        method="highs",
    )
    value = -res.fun if res.status == 0 else 0.0
    if value <= 1e-9:
        return PLICQResult(True, None, licq, act)
    cert = np.zeros(P.m)
    cert[idx] = res.x
    return PLICQResult(False, cert, licq, act)


def slater_margin(P: Polyhedron) -> SlaterResult:
    """``min_x max_i (<a_i, x> - b_i)``; a negative value means ``C`` has interior."""
    m, n = P.m, P.n
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([P.rows, -np.ones((m, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=P.offsets, bounds=[(None, None)] * (n + 1), method="highs")
    if res.status == 3:
        return SlaterResult(-np.inf, None, True)
    if res.status != 0:
        raise RuntimeError(f"Slater LP failed: {res.message}")
    return SlaterResult(float(res.x[-1]) + 0.0, res.x[:n], False)


def inverse_triangle_constant(P: Polyhedron, x, tol=None) -> float:
    """A witness ``gamma`` for ``sum l_i |a_i| <= gamma |sum l_i a_i|`` on the active rows.

    Computed as ``1 / min |sum l_i a_i / |a_i||_inf`` over the unit simplex,
    which bounds the Euclidean constant from above.  Returns ``inf`` when
    PLICQ fails and 1.0 when nothing is active.
    """
    act = active_set(P, x, tol)
    idx = [i for i in act.indices if np.linalg.norm(P.rows[i]) > 0.0]
    if not idx:
        return 1.0
    unit = P.rows[idx] / np.linalg.norm(P.rows[idx], axis=1)[:, None]
    k, n = unit.shape
    # variables (l_1..l_k, t): min t, -t <= (unit^T l)_p <= t, sum l = 1
    c = np.zeros(k + 1)
    c[-1] = 1.0
    A_ub = np.vstack([
        np.hstack([unit.T, -np.ones((n, 1))]),
        np.hstack([-unit.T, -np.ones((n, 1))]),
    ])
    A_eq = np.hstack([np.ones((1, k)), np.zeros((1, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * n), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (k + 1), method="highs")
    t = res.fun if res.status == 0 else 0.0
    return np.inf if t <= 1e-12 else 1.0 / t
