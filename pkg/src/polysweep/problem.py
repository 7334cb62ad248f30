"""Problem data for the controlled polyhedral sweeping process.

A ``SweepingProblem`` bundles the dynamics ``x' in -N(x; C(a, b)) + g(x, u)``
with the Bolza cost ``phi(x(T)) + int ell dt``.  The functions ``g``, ``phi``
and ``ell`` come from a small library of named families (identity, affine,
linear, diagonal quadratic) so that problems round-trip through JSON; any
object with the same methods works at library level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .polyhedra import Polyhedron


def _arr(v, ndmin=1):
    return np.array(v, dtype=float, ndmin=ndmin)


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not np.isfinite(v):
            raise ValueError("non-finite floats cannot be serialized")
        return format(v, ".17g") if v != int(v) or abs(v) >= 1e16 else format(v, ".1f")
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def canonical_json(data) -> str:
    """Deterministic JSON: insertion-ordered keys, floats with 17 significant digits."""
    return _fmt(data) + "\n"


# --------------------------------------------------------------------------
# perturbation g(x, u)


class IdentityPerturbation:
    """``g(x, u) = u`` (requires ``d == n``)."""

    kind = "identity"

    def __init__(self, n):
        self.n = n

    def __call__(self, x, u):
        return np.asarray(u, dtype=float).copy()

    def jac_x(self, x, u):
        return np.zeros((self.n, self.n))

    def jac_u(self, x, u):
        return np.eye(self.n)

    def affine_coefficients(self):
        return np.zeros((self.n, self.n)), np.eye(self.n), np.zeros(self.n)

    def to_dict(self):
        return {"kind": "identity"}


class AffinePerturbation:
    """``g(x, u) = Gx x + Gu u + c``."""

    kind = "affine"

    def __init__(self, Gx, Gu, c):
        self.Gx = _arr(Gx, 2)
        self.Gu = _arr(Gu, 2)
        self.c = _arr(c)

    def __call__(self, x, u):
        return self.Gx @ x + self.Gu @ u + self.c

    def jac_x(self, x, u):
        return self.Gx.copy()

    def jac_u(self, x, u):
        return self.Gu.copy()

    def affine_coefficients(self):
        return self.Gx, self.Gu, self.c

    def to_dict(self):
        return {"kind": "affine", "Gx": self.Gx.tolist(), "Gu": self.Gu.tolist(), "c": self.c.tolist()}


# --------------------------------------------------------------------------
# terminal cost phi(x)


class LinearCost:
    """``phi(x) = <c, x> + c0``."""

    kind = "linear"

    def __init__(self, c, c0=0.0):
        self.c = _arr(c)
        self.c0 = float(c0)

    def __call__(self, x):
        return float(self.c @ x + self.c0)

    def grad(self, x):
        return self.c.copy()

    def to_dict(self):
        return {"kind": "linear", "c": self.c.tolist(), "c0": self.c0}


class QuadraticCost:
    """``phi(x) = 1/2 sum diag_i x_i^2 + <c, x> + c0``."""

    kind = "quadratic"

    def __init__(self, diag, c=None, c0=0.0):
        self.diag = _arr(diag)
        self.c = np.zeros_like(self.diag) if c is None else _arr(c)
        self.c0 = float(c0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * self.diag @ (x * x) + self.c @ x + self.c0)

    def grad(self, x):
        return self.diag * np.asarray(x, dtype=float) + self.c

    def to_dict(self):
        return {"kind": "quadratic", "diag": self.diag.tolist(), "c": self.c.tolist(), "c0": self.c0}


# --------------------------------------------------------------------------
# running cost ell(t, x, a, b, u, xdot, adot, bdot)


class DiagQuadraticRunningCost:
    """``ell = 1/2 (sum x_diag x^2 + sum u_diag u^2 + sum xdot_diag xdot^2)``.

    Blocks left as ``None`` do not enter the cost.  ``grad`` returns the
    seven blocks ``(w_x, w_a, w_b, w_u, v_x, v_a, v_b)``.
    """

    kind = "diag_quadratic"

    def __init__(self, u=None, x=None, xdot=None):
        self.u = None if u is None else _arr(u)
        self.x = None if x is None else _arr(x)
        self.xdot = None if xdot is None else _arr(xdot)

    def __call__(self, t, x, a, b, u, xdot, adot, bdot):
        val = 0.0
        if self.u is not None:
            val += 0.5 * float(self.u @ (np.asarray(u) ** 2))
        if self.x is not None:
            val += 0.5 * float(self.x @ (np.asarray(x) ** 2))
        if self.xdot is not None:
            val += 0.5 * float(self.xdot @ (np.asarray(xdot) ** 2))
        return val

    def grad(self, t, x, a, b, u, xdot, adot, bdot):
        x, u, xdot = (np.asarray(z, dtype=float) for z in (x, u, xdot))
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        w_x = self.x * x if self.x is not None else np.zeros_like(x)
        w_u = self.u * u if self.u is not None else np.zeros_like(u)
        v_x = self.xdot * xdot if self.xdot is not None else np.zeros_like(xdot)
        return (w_x, np.zeros(a.size), np.zeros(b.size), w_u, v_x, np.zeros(a.size), np.zeros(b.size))

    def vectorized(self, X, U, XD):
        """Per-step values for stacked ``X`` (nu, n), ``U`` (nu, d), ``XD`` (nu, n)."""
        val = np.zeros(U.shape[0])
        if self.u is not None:
            val += 0.5 * (U ** 2) @ self.u
        if self.x is not None:
            val += 0.5 * (X ** 2) @ self.x
        if self.xdot is not None:
            val += 0.5 * (XD ** 2) @ self.xdot
        return val

    def to_dict(self):
        out = {"kind": "diag_quadratic"}
        for key in ("u", "x", "xdot"):
            val = getattr(self, key)
            out[key] = None if val is None else val.tolist()
        return out


class ZeroRunningCost(DiagQuadraticRunningCost):
    kind = "zero"

    def __init__(self):
        super().__init__()

    def to_dict(self):
        return {"kind": "zero"}


# --------------------------------------------------------------------------
# control set U


class BoxSet:
    kind = "box"

    def __init__(self, lo, hi):
        self.lo = _arr(lo)
        self.hi = _arr(hi)
        if np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi")

    @property
    def d(self):
        return self.lo.size

    def contains(self, u, tol=1e-12):
        u = np.asarray(u)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def violation(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.max(np.concatenate([self.lo - u, u - self.hi, [0.0]])))

    def project(self, u):
        return np.clip(u, self.lo, self.hi)

    def support(self, psi):
        """``max_{u in U} <psi, u>``."""
        psi = np.asarray(psi, dtype=float)
        return float(np.sum(np.where(psi > 0, psi * self.hi, psi * self.lo)))

    def normal_bounds(self, u, tol=1e-9):
        """Per-component bounds describing ``N(u; U)``."""
        out = []
        for k in range(self.d):
            at_lo = abs(u[k] - self.lo[k]) <= tol
            at_hi = abs(u[k] - self.hi[k]) <= tol
            if at_lo and at_hi:
                out.append((None, None))
            elif at_hi:
                out.append((0.0, None))
            elif at_lo:
                out.append((None, 0.0))
            else:
                out.append((0.0, 0.0))
        return out

    def sample(self, unit):
        """Map points of ``[0, 1]^d`` into the box."""
        return self.lo + np.asarray(unit) * (self.hi - self.lo)

    def to_dict(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class BallSet:
    kind = "ball"

    def __init__(self, center, radius):
        self.center = _arr(center)
        self.radius = float(radius)

    @property
    def d(self):
        return self.center.size

    def contains(self, u, tol=1e-12):
        return bool(np.linalg.norm(np.asarray(u) - self.center) <= self.radius + tol)

    def violation(self, u):
        return max(0.0, float(np.linalg.norm(np.asarray(u) - self.center) - self.radius))

    def project(self, u):
        u = np.asarray(u, dtype=float)
        r = np.linalg.norm(u - self.center)
        return u.copy() if r <= self.radius else self.center + (u - self.center) * (self.radius / r)

    def support(self, psi):
        psi = np.asarray(psi, dtype=float)
        return float(psi @ self.center + self.radius * np.linalg.norm(psi))

    def sample(self, unit):
        unit = np.asarray(unit, dtype=float)
        z = 2.0 * unit - 1.0
        nz = np.linalg.norm(z, ord=np.inf)
        if nz == 0:
            return self.center.copy()
        # radial map of the cube onto the ball
        return self.center + self.radius * z * (nz / max(np.linalg.norm(z), 1e-300))

    def to_dict(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


class FiniteSet:
    kind = "finite"

    def __init__(self, points):
        self.points = _arr(points, 2)

    @property
    def d(self):
        return self.points.shape[1]

    def contains(self, u, tol=1e-12):
        return bool(np.min(np.linalg.norm(self.points - np.asarray(u), axis=1)) <= tol)

    def violation(self, u):
        return float(np.min(np.linalg.norm(self.points - np.asarray(u), axis=1)))

    def project(self, u):
        return self.points[np.argmin(np.linalg.norm(self.points - np.asarray(u), axis=1))].copy()

    def support(self, psi):
        return float(np.max(self.points @ np.asarray(psi, dtype=float)))

    def sample(self, unit):
        unit = np.asarray(unit, dtype=float)
        k = min(int(unit[0] * len(self.points)), len(self.points) - 1)
        return self.points[k].copy()

    def to_dict(self):
        return {"kind": "finite", "points": self.points.tolist()}


# --------------------------------------------------------------------------
# a, b control specifications


FIXED = "fixed"
SAMPLED = "sampled"
DECISION = "decision"


@dataclass
class ControlSpec:
    """How a moving-set control ``a(t)`` or ``b(t)`` is given.

    ``fixed`` keeps the initial value, ``sampled`` interpolates ``values``
    piecewise linearly on ``mesh``, ``decision`` leaves it to the optimizer.
    """

    kind: str = FIXED
    mesh: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (FIXED, SAMPLED, DECISION):
            raise ValueError(f"unknown control kind {self.kind!r}")
        if self.kind == SAMPLED:
            if self.mesh is None or self.values is None:
                raise ValueError("sampled control needs mesh and values")
            self.mesh = _arr(self.mesh)
            self.values = np.asarray(self.values, dtype=float)

    def evaluate(self, t, initial):
        if self.kind != SAMPLED:
            return np.array(initial, dtype=float)
        vals = self.values.reshape(len(self.mesh), -1)
        out = np.array([np.interp(t, self.mesh, vals[:, k]) for k in range(vals.shape[1])])
        return out.reshape(np.shape(initial))

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == SAMPLED:
            out["mesh"] = self.mesh.tolist()
            out["values"] = self.values.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], data.get("mesh"), data.get("values"))


# --------------------------------------------------------------------------


def perturbation_from_dict(data, n):
    if data["kind"] == "identity":
        return IdentityPerturbation(n)
    if data["kind"] == "affine":
        return AffinePerturbation(data["Gx"], data["Gu"], data["c"])
    raise ValueError(f"unknown perturbation kind {data['kind']!r}")


def terminal_from_dict(data):
    if data["kind"] == "linear":
        return LinearCost(data["c"], data.get("c0", 0.0))
    if data["kind"] == "quadratic":
        return QuadraticCost(data["diag"], data.get("c"), data.get("c0", 0.0))
    raise ValueError(f"unknown terminal cost kind {data['kind']!r}")


def running_from_dict(data):
    if data["kind"] == "zero":
        return ZeroRunningCost()
    if data["kind"] == "diag_quadratic":
        return DiagQuadraticRunningCost(data.get("u"), data.get("x"), data.get("xdot"))
    raise ValueError(f"unknown running cost kind {data['kind']!r}")


def control_set_from_dict(data):
    if data["kind"] == "box":
        return BoxSet(data["lo"], data["hi"])
    if data["kind"] == "ball":
        return BallSet(data["center"], data["radius"])
    if data["kind"] == "finite":
        return FiniteSet(data["points"])
    raise ValueError(f"unknown control set kind {data['kind']!r}")


@dataclass
class SweepingProblem:
    """Data of the sweeping control problem.

    ``polyhedron`` carries the initial moving-set data ``(a(0), b(0))``;
    ``a_ctrl``/``b_ctrl`` say how they evolve afterwards.
    """

    T: float
    x0: np.ndarray
    polyhedron: Polyhedron
    g: object
    U: object
    phi: object
    ell: object
    a_ctrl: ControlSpec = field(default_factory=ControlSpec)
    b_ctrl: ControlSpec = field(default_factory=ControlSpec)
    name: str = ""

    def __post_init__(self):
        self.x0 = _arr(self.x0)
        self.T = float(self.T)
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.x0.size != self.polyhedron.n:
            raise ValueError("x0 dimension does not match the polyhedron")
        if not self.polyhedron.contains(self.x0):
            raise ValueError("x0 must lie in C(a(0), b(0))")

    @property
    def n(self):
        return self.polyhedron.n

    @property
    def m(self):
        return self.polyhedron.m

    @property
    def d(self):
        return self.U.d

    @property
    def a0(self):
        return np.array(self.polyhedron.rows)

    @property
    def b0(self):
        return np.array(self.polyhedron.offsets)

    def a_at(self, t):
        return self.a_ctrl.evaluate(t, self.a0)

    def b_at(self, t):
        return self.b_ctrl.evaluate(t, self.b0)

    def moving_set_on(self, mesh):
        """Stacked ``(a_j, b_j)`` on ``mesh`` for fixed or sampled controls."""
        mesh = np.asarray(mesh, dtype=float)
        A = np.stack([self.a_at(t) for t in mesh])
        B = np.stack([self.b_at(t) for t in mesh])
        return A, B

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dims": {"n": self.n, "m": self.m, "d": self.d},
            "T": self.T,
            "x0": self.x0.tolist(),
            "polyhedron": self.polyhedron.to_dict(),
            "g": self.g.to_dict(),
            "U": self.U.to_dict(),
            "phi": self.phi.to_dict(),
            "ell": self.ell.to_dict(),
            "a_ctrl": self.a_ctrl.to_dict(),
            "b_ctrl": self.b_ctrl.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepingProblem":
        poly = Polyhedron.from_dict(data["polyhedron"])
        prob = cls(
            T=data["T"],
            x0=data["x0"],
            polyhedron=poly,
            g=perturbation_from_dict(data["g"], poly.n),
            U=control_set_from_dict(data["U"]),
            phi=terminal_from_dict(data["phi"]),
            ell=running_from_dict(data["ell"]),
            a_ctrl=ControlSpec.from_dict(data.get("a_ctrl", {"kind": FIXED})),
            b_ctrl=ControlSpec.from_dict(data.get("b_ctrl", {"kind": FIXED})),
            name=data.get("name", ""),
        )
        dims = data.get("dims")
        if dims and (dims["n"], dims["m"], dims["d"]) != (prob.n, prob.m, prob.d):
            raise ValueError(f"dims {dims} disagree with the data")
        return prob

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SweepingProblem":
        return cls.from_dict(json.loads(text))


def uniform_mesh(T, nu):
    """``nu`` equal steps on ``[0, T]``."""
    if nu < 1:
        raise ValueError("nu must be at least 1")
    mesh = np.linspace(0.0, T, nu + 1)
    mesh[-1] = T
    return mesh
