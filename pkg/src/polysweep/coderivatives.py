"""Coderivatives of polyhedral normal-cone mappings.

The values of these coderivatives are infinite sets, so they are exposed in
two ways: ``coderiv_orthant`` returns an exact finite description (which
components are forced to zero, forced nonnegative, or free), and the
``*_membership`` functions return the max-norm distance from a candidate
vector to the upper estimate together with the multipliers ``(p, q)`` that
attain it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from .errors import DomainViolation, NotInGraph
from .polyhedra import Polyhedron, active_set, default_tol, normal_cone_multipliers

EMPTY = "empty"
CONSTRAINED = "constrained"
MAX_ENUMERATED_ACTIVE = 8


@dataclass(frozen=True)
class CoderivDescriptor:
    """Finite description of ``{gamma : gamma_i = 0 (zero), gamma_i >= 0 (nonneg)}``."""

    status: str
    zero_indices: Tuple[int, ...] = ()
    nonneg_indices: Tuple[int, ...] = ()
    free_indices: Tuple[int, ...] = ()
    affine_map: Optional[dict] = field(default=None, compare=False)

    @property
    def is_empty(self) -> bool:
        return self.status == EMPTY

    def bounds(self, m: int):
        """Per-component ``(lo, hi)`` bounds (``None`` for unbounded)."""
        if self.is_empty:
            raise ValueError("empty descriptor has no bounds")
        out = [(None, None)] * m
        for i in self.zero_indices:
            out[i] = (0.0, 0.0)
        for i in self.nonneg_indices:
            out[i] = (0.0, None)
        return out

    def distance(self, gamma) -> float:
        """Max-norm distance from ``gamma`` to the described set."""
        if self.is_empty:
            return np.inf
        gamma = np.asarray(gamma, dtype=float)
        d = 0.0
        for i in self.zero_indices:
            d = max(d, abs(gamma[i]))
        for i in self.nonneg_indices:
            d = max(d, -gamma[i])
        return float(d)

    def contains(self, gamma, tol=0.0) -> bool:
        return self.distance(gamma) <= tol

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "zero_indices": list(self.zero_indices),
            "nonneg_indices": list(self.nonneg_indices),
            "free_indices": list(self.free_indices),
        }


class MembershipResult(NamedTuple):
    residual: float
    witness: Optional[Tuple[np.ndarray, np.ndarray]]
    empty: bool

    def to_dict(self) -> dict:
        return {
            "residual": None if not np.isfinite(self.residual) else float(self.residual),
            "empty": bool(self.empty),
            "p": None if self.witness is None else self.witness[0].tolist(),
            "q": None if self.witness is None else self.witness[1].tolist(),
        }


def _classify(val, tol):
    if val < -tol:
        return -1
    if val > tol:
        return 1
    return 0


def coderiv_orthant(x, v, w, tol=1e-9) -> CoderivDescriptor:
    """Coderivative of ``N_{R^m_-}`` at ``(x, v)`` in direction ``w``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if not (x.shape == v.shape == w.shape):
        raise ValueError("x, v, w must have the same shape")
    for i in range(x.size):
        if x[i] > tol or v[i] < -tol or min(abs(x[i]), abs(v[i])) > tol:
            raise NotInGraph(f"component {i}: (x, v) = ({x[i]}, {v[i]}) is off gph N_R-")
    zero, nonneg, free = [], [], []
    for i in range(x.size):
        sx, sv, sw = _classify(x[i], tol), _classify(v[i], tol), _classify(w[i], tol)
        if sv > 0 and sw != 0:
            return CoderivDescriptor(EMPTY)
        if sx < 0 or (sv == 0 and sw < 0):
            zero.append(i)
        elif sx == 0 and sv == 0 and sw > 0:
            nonneg.append(i)
        else:
            free.append(i)
    return CoderivDescriptor(CONSTRAINED, tuple(zero), tuple(nonneg), tuple(free))


def stacked_G(A, x, w, p, q) -> np.ndarray:
    """``(A^T q | p_1 w + q_1 x | ... | p_m w + q_m x | -q)``."""
    A = np.asarray(A, dtype=float)
    blocks = [A.T @ q]
    blocks += [p[i] * np.asarray(w) + q[i] * np.asarray(x) for i in range(A.shape[0])]
    blocks.append(-np.asarray(q, dtype=float))
    return np.concatenate(blocks)


def stacked_F(A, x, y, p, q, jac_x, jac_u) -> np.ndarray:
    """``(A^T q - gx^T y | p_i y + q_i x rows | -q | -gu^T y)``."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    blocks = [A.T @ q - np.asarray(jac_x).T @ y]
    blocks += [p[i] * y + q[i] * np.asarray(x) for i in range(A.shape[0])]
    blocks.append(-np.asarray(q, dtype=float))
    blocks.append(-np.asarray(jac_u).T @ y)
    return np.concatenate(blocks)


def _linear_parts(A, x, direction, extra_x=None, extra_u=None):
    """Stacked vector as ``const + Lp @ p + Lq @ q``."""
    m, n = A.shape
    rows_x = n
    size = n + m * n + m + (0 if extra_u is None else extra_u.size)
    const = np.zeros(size)
    Lp = np.zeros((size, m))
    Lq = np.zeros((size, m))
    Lq[:n, :] = A.T
    if extra_x is not None:
        const[:n] = extra_x
    for i in range(m):
        sl = slice(rows_x + i * n, rows_x + (i + 1) * n)
        Lp[sl, i] = direction
        Lq[sl, i] = x
    off = n + m * n
    Lq[off:off + m, :] = -np.eye(m)
    if extra_u is not None:
        const[off + m:] = extra_u
    return const, Lp, Lq


def _faces(A, b, x, v, act, tol):
    if len(act) <= MAX_ENUMERATED_ACTIVE:
        for size in range(len(act) + 1):
            yield from itertools.combinations(act, size)
        return
    # large active sets: only subsets of the minimum-norm multiplier support
    P = Polyhedron(A, b)
    eta = normal_cone_multipliers(P, x, v, tol)
    support = tuple(int(i) for i in np.flatnonzero(eta > tol))
    for size in range(len(support), -1, -1):
        yield from itertools.combinations(support, size)


def _search(A, b, x, v, direction, candidate, const, Lp, Lq, tol):
    m, n = A.shape
    P = Polyhedron(A, b)
    act = list(active_set(P, x, tol).indices)
    Adir = A @ direction
    slack = A @ x - b
    vtol = max(tol, default_tol(x, b, v))
    # v must lie in N(x; C) before anything else
    normal_cone_multipliers(P, x, v, vtol)
    best = (np.inf, None)
    any_face = False
    size = candidate.size
    for S in _faces(A, b, x, v, act, tol):
        S = set(S)
        if any(abs(Adir[i]) > tol for i in S):
            continue
        bounds_p = [(0.0, None) if i in S else (0.0, 0.0) for i in range(m)]
        bounds_q = []
        for i in range(m):
            if slack[i] < -tol:
                bounds_q.append((0.0, 0.0))
            elif i in S:
                bounds_q.append((None, None))
            else:
                s = _classify(Adir[i], tol)
                bounds_q.append((0.0, 0.0) if s < 0 else (0.0, None) if s > 0 else (None, None))
        # variables: p (m), q (m), t
        nv = 2 * m + 1
        c = np.zeros(nv)
        c[-1] = 1.0
        L = np.hstack([Lp, Lq])
        ones = np.ones((size, 1))
        fit = np.hstack([L, -ones])
        gap = np.hstack([A.T, np.zeros((n, m)), np.zeros((n, 1))])
        bounds = bounds_p + bounds_q + [(0.0, None)]
        # A^T p = v exactly when possible, within the tolerance band otherwise
        both = np.vstack([fit, np.hstack([-L, -ones])])
        res = linprog(c, A_ub=both, b_ub=np.concatenate([candidate - const, const - candidate]),
                      A_eq=gap, b_eq=v, bounds=bounds, method="highs")
        if res.status != 0:
            res = linprog(c, A_ub=np.vstack([both, gap, -gap]),
                          b_ub=np.concatenate([candidate - const, const - candidate, v + vtol, vtol - v]),
                          bounds=bounds, method="highs")
        if res.status != 0:
            continue
        any_face = True
        p, q = res.x[:m], res.x[m:2 * m]
        # residual recomputed directly from the witness
        r = float(np.max(np.abs(const + Lp @ p + Lq @ q - candidate))) if size else 0.0
        if r < best[0] - 1e-15:
            best = (r, (p, q))
    if not any_face:
        return MembershipResult(np.inf, None, True)
    return MembershipResult(best[0], best[1], False)


def coderiv_G_membership(P: Polyhedron, x, v, w, candidate, tol=None, strict=False) -> MembershipResult:
    """Distance from ``candidate`` to the upper estimate of ``D*G(x, a, b, v)(w)``.

    ``G(x, a, b) = N(x; C(a, b))``.  A residual of 0 certifies membership in
    the estimate (exact under LICQ).  When no admissible ``p`` keeps ``w``
    orthogonal to its support rows the value is empty: ``residual`` is
    ``inf`` and ``empty`` is set (``DomainViolation`` is raised instead when
    ``strict``).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    A, b = P.rows, P.offsets
    if candidate.size != P.n + P.m * P.n + P.m:
        raise ValueError("candidate must have n + m n + m components")
    if tol is None:
        tol = default_tol(x, b)
    const, Lp, Lq = _linear_parts(A, x, w)
    out = _search(A, b, x, v, w, candidate, const, Lp, Lq, tol)
    if out.empty and strict:
        raise DomainViolation("w is not orthogonal to the support rows of any admissible p")
    return out


def coderiv_F_membership(P: Polyhedron, g_jacobians, x, u, w, y, candidate, g_value=None,
                         tol=None, strict=False) -> MembershipResult:
    """Distance from ``candidate`` to the upper estimate of ``D*F(x, a, b, u, w)(y)``.

    ``F(x, a, b, u) = N(x; C(a, b)) - g(x, u)``; ``g_jacobians`` is the pair
    ``(d_x g, d_u g)`` at ``(x, u)`` and ``g_value`` is ``g(x, u)`` (needed to
    form ``w + g``).
    """
    jac_x, jac_u = (np.atleast_2d(np.asarray(J, dtype=float)) for J in g_jacobians)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if g_value is None:
        raise ValueError("g_value = g(x, u) is required")
    A, b = P.rows, P.offsets
    d = jac_u.shape[1]
    if candidate.size != P.n + P.m * P.n + P.m + d:
        raise ValueError("candidate must have n + m n + m + d components")
    if tol is None:
        tol = default_tol(x, b)
    v = w + np.asarray(g_value, dtype=float)
    const, Lp, Lq = _linear_parts(A, x, y, extra_x=-jac_x.T @ y, extra_u=-jac_u.T @ y)
    out = _search(A, b, x, v, y, candidate, const, Lp, Lq, tol)
    if out.empty and strict:
        raise DomainViolation("y is not orthogonal to the support rows of any admissible p")
    return out
