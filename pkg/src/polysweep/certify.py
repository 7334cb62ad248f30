"""Dual certificates for the discrete necessary optimality conditions.

With the primal quadruple fixed, every condition is linear in the dual
variables once the sign rule for ``gamma`` is fixed cell by cell.  Each
admissible pattern gives one LP minimizing the infinity norm of the
condition residuals; the best pattern wins.

Layout conventions: ``p^a_j`` is stored as an ``(m, n)`` array (row ``i``
pairs with ``a_ij``), ``eta`` has ``nu + 1`` rows whose last row is the
endpoint multiplier ``xi``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import (DimensionMismatch, FamilyMismatch, NotInNormalCone, PatternBudgetExceeded,
                     PrimalInfeasible)
from .polyhedra import Polyhedron, normal_cone_multipliers
from .problem import BallSet, BoxSet
from .transcription import DiscreteProblem, theta_terms

PATTERN_CAP = 3 ** 10

# gamma sign-rule cells
INACTIVE = "I"   # constraint inactive: gamma = 0
POSITIVE = "E"   # eta > 0: gamma free, <a, y> = 0
NEG = "N"        # eta = 0, <a, y> <= 0: gamma = 0
POS = "P"        # eta = 0, <a, y> >= 0: gamma >= 0
ZERO = "Z"       # eta = 0, <a, y> = 0: gamma free


@dataclass
class DualCertificate:
    lam: float
    eta: np.ndarray
    gamma: np.ndarray
    px: np.ndarray
    pa: Optional[np.ndarray]
    pb: Optional[np.ndarray]
    psi: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    case_pattern: list
    subgradients: dict
    residual: float = float("nan")
    normal_residual: float = float("nan")
    abnormal: bool = False
    mode: str = "th72"
    patterns_tried: int = 0
    budget_exceeded: bool = False
    families: dict = field(default_factory=dict)
    normal_families: dict = field(default_factory=dict)
    isolation: dict = field(default_factory=dict)

    @property
    def xi(self):
        return self.eta[-1]

    def _duals(self):
        names = ["gamma", "px", "psi", "alpha1", "alpha2"]
        if self.pa is not None:
            names.append("pa")
        if self.pb is not None:
            names.append("pb")
        return names

    def scaled(self, t) -> "DualCertificate":
        """All dual variables times ``t``; the primal ``eta_j`` (j < nu) are kept."""
        out = DualCertificate(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.lam = self.lam * t
        for name in self._duals():
            setattr(out, name, getattr(self, name) * t)
        out.eta = self.eta.copy()
        out.eta[-1] = self.eta[-1] * t
        out.families = {}
        out.normal_families = dict(self.normal_families)
        out.isolation = dict(self.isolation)
        return out

    def ntc_sum(self) -> float:
        """``lam + |alpha1 + alpha2| + |xi| + sum_{j<nu} |p^x_j| + |p^a_0| + |p^b_0| + |psi|`` (l1)."""
        s = self.lam + np.abs(self.alpha1 + self.alpha2).sum() + np.abs(self.xi).sum()
        s += np.abs(self.px[:-1]).sum() + np.abs(self.psi).sum()
        if self.pa is not None:
            s += np.abs(self.pa[0]).sum()
        if self.pb is not None:
            s += np.abs(self.pb[0]).sum()
        return float(s)

    def ntc1_sum(self) -> float:
        """``lam + |alpha1 + alpha2| + |gamma|`` (l1)."""
        return float(self.lam + np.abs(self.alpha1 + self.alpha2).sum() + np.abs(self.gamma).sum())

    def normalized(self) -> "DualCertificate":
        s = self.ntc1_sum() if self.mode == "th72" else self.ntc_sum()
        if s == 0.0:
            s = self.ntc_sum()
        if s == 0.0:
            return self.scaled(1.0)
        return self.scaled(1.0 / s)

    def to_dict(self) -> dict:
        def lst(v):
            return None if v is None else np.asarray(v).tolist()

        return {
            "mode": self.mode, "lambda": self.lam, "eta": lst(self.eta), "gamma": lst(self.gamma),
            "px": lst(self.px), "pa": lst(self.pa), "pb": lst(self.pb), "psi": lst(self.psi),
            "alpha1": lst(self.alpha1), "alpha2": lst(self.alpha2), "case_pattern": self.case_pattern,
            "subgradients": {k: lst(v) for k, v in self.subgradients.items()},
            "residual": self.residual, "normal_residual": self.normal_residual,
            "abnormal": self.abnormal, "patterns_tried": self.patterns_tried,
            "budget_exceeded": self.budget_exceeded, "families": self.families,
            "normal_families": self.normal_families, "isolation": self.isolation,
        }


# --------------------------------------------------------------------------
# primal data


@dataclass
class _Primal:
    q: object
    h: np.ndarray
    eta: np.ndarray          # (nu, m) from the arc representation
    active: np.ndarray       # (nu + 1, m) bool
    slack: np.ndarray        # (nu + 1, m) a_ij . x_j - b_ij
    jx: list
    ju: list
    sub: dict
    theta: tuple
    band_hi: np.ndarray      # (nu + 1, m) bool, |a_ij| at 1 + delta
    band_lo: np.ndarray
    grad_phi: np.ndarray


def _tol_for(*arrays):
    return 1e-9 * max(1.0, *(float(np.max(np.abs(a))) if np.size(a) else 0.0 for a in arrays))


def subgradients(dp: DiscreteProblem, q) -> dict:
    """The seven gradient blocks of the running cost at every step."""
    ell = dp.base.ell
    xd, ad, bd = q.xdot(), q.adot(), q.bdot()
    keys = ("wx", "wa", "wb", "wu", "vx", "va", "vb")
    rows = {k: [] for k in keys}
    for j in range(q.nu):
        g = ell.grad(q.mesh[j], q.x[j], q.a[j], q.b[j], q.u[j], xd[j], ad[j], bd[j])
        for k, v in zip(keys, g):
            rows[k].append(np.ravel(v))
    return {k: np.array(v) for k, v in rows.items()}


def primal_multipliers(dp: DiscreteProblem, q, tol=None) -> np.ndarray:
    """Minimum-norm ``eta_j`` reproducing each step; raises ``PrimalInfeasible``."""
    base = dp.base
    out = np.zeros((q.nu, base.m))
    xd = q.xdot()
    for j in range(q.nu):
        v = base.g(q.x[j], q.u[j]) - xd[j]
        P = Polyhedron(q.a[j], q.b[j])
        t = tol if tol is not None else 1e-8 * max(1.0, float(np.max(np.abs(v))))
        try:
            out[j] = normal_cone_multipliers(P, q.x[j], v, t)
        except NotInNormalCone as exc:
            raise PrimalInfeasible(f"step {j}: {exc}") from None
    return out


def _primal(dp: DiscreteProblem, q, sub=None) -> _Primal:
    base = dp.base
    if q.nu != dp.nu:
        raise DimensionMismatch("quadruple and problem meshes differ")
    if not isinstance(base.U, (BoxSet, BallSet)):
        raise FamilyMismatch("certificates are implemented for box and ball control sets only")
    eta = primal_multipliers(dp, q)
    slack = np.einsum("jmn,jn->jm", q.a, q.x) - q.b
    tol = _tol_for(q.x, q.b)
    active = slack >= -tol
    if sub is None:
        sub = subgradients(dp, q)
    jx = [np.atleast_2d(base.g.jac_x(q.x[j], q.u[j])) for j in range(q.nu)]
    ju = [np.atleast_2d(base.g.jac_u(q.x[j], q.u[j])) for j in range(q.nu)]
    norms = np.linalg.norm(q.a, axis=2)
    if dp.a_decision:
        band_hi = np.abs(norms - (1 + dp.delta_k)) <= 1e-9
        band_lo = np.abs(norms - (1 - dp.delta_k)) <= 1e-9
    else:
        band_hi = band_lo = np.zeros_like(norms, dtype=bool)
    return _Primal(q, q.h, eta, active, slack, jx, ju, sub, theta_terms(dp, q), band_hi, band_lo,
                   np.asarray(base.phi.grad(q.x[-1]), dtype=float))


def case_cells(pr: _Primal, eta_tol=1e-10):
    """Forced cells and the list of ambiguous ``(j, i)`` cells."""
    nu, m = pr.eta.shape
    forced = [[None] * m for _ in range(nu)]
    ambiguous = []
    for j in range(nu):
        for i in range(m):
            if not pr.active[j, i]:
                forced[j][i] = INACTIVE
            elif pr.eta[j, i] > eta_tol:
                forced[j][i] = POSITIVE
            else:
                ambiguous.append((j, i))
    return forced, ambiguous


# --------------------------------------------------------------------------
# linear system


class _Layout:
    def __init__(self):
        self.blocks = {}
        self.size = 0
        self.lb = []
        self.ub = []

    def add(self, name, shape, lb=None, ub=None):
        k = int(np.prod(shape)) if shape else 1
        self.blocks[name] = (self.size, shape)
        self.size += k
        self.lb += [lb] * k
        self.ub += [ub] * k

    def has(self, name):
        return name in self.blocks

    def index(self, name, *idx):
        start, shape = self.blocks[name]
        return start + (int(np.ravel_multi_index(idx, shape)) if shape else 0)

    def span(self, name, *lead):
        """Flat indices of ``block[lead]`` (a sub-array)."""
        start, shape = self.blocks[name]
        idx = np.arange(int(np.prod(shape)) if shape else 1).reshape(shape if shape else ())
        return start + np.ravel(idx[lead] if lead else idx)

    def fix(self, flat, lo, hi):
        self.lb[flat] = lo
        self.ub[flat] = hi


class _Rows:
    """Affine rows ``M z + c`` over the layout."""

    def __init__(self, layout, k):
        self.layout = layout
        self.M = np.zeros((k, layout.size))
        self.c = np.zeros(k)

    @classmethod
    def var(cls, layout, name, *lead):
        idx = layout.span(name, *lead)
        r = cls(layout, idx.size)
        r.M[np.arange(idx.size), idx] = 1.0
        return r

    @classmethod
    def lam_times(cls, layout, vec):
        vec = np.ravel(np.asarray(vec, dtype=float))
        r = cls(layout, vec.size)
        r.M[:, layout.index("lam")] = vec
        return r

    def _new(self, M, c):
        r = _Rows(self.layout, M.shape[0])
        r.M, r.c = M, c
        return r

    def __add__(self, other):
        if isinstance(other, _Rows):
            return self._new(self.M + other.M, self.c + other.c)
        return self._new(self.M.copy(), self.c + np.ravel(other))

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, s):
        return self._new(s * self.M, s * self.c)

    def __neg__(self):
        return (-1.0) * self

    def left(self, A):
        """``A @ rows``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return self._new(A @ self.M, A @ self.c)

    @staticmethod
    def stack(parts):
        parts = list(parts)
        M = np.vstack([p.M for p in parts])
        c = np.concatenate([p.c for p in parts])
        return parts[0]._new(M, c)


@dataclass
class ConditionSystem:
    """The assembled conditions for one case pattern.

    ``equalities`` and ``inequalities`` map a family name to rows ``M z + c``
    that must vanish (resp. be nonpositive); ``lb``/``ub`` carry the sign
    constraints and the zero pins.
    """

    layout: _Layout
    equalities: dict
    inequalities: dict
    pattern: list
    primal: _Primal

    @property
    def lb(self):
        return self.layout.lb

    @property
    def ub(self):
        return self.layout.ub


def _layout(dp, pr: _Primal):
    nu, m = pr.eta.shape
    n, d = dp.base.n, dp.base.d
    L = _Layout()
    L.add("lam", (), 0.0, None)
    L.add("px", (nu + 1, n))
    if dp.a_decision:
        L.add("pa", (nu + 1, m, n))
        L.add("al1", (nu + 1, m), 0.0, None)
        L.add("al2", (nu + 1, m), None, 0.0)
    if dp.b_decision:
        L.add("pb", (nu + 1, m))
    L.add("gam", (nu, m))
    L.add("psi", (nu, d))
    L.add("xi", (m,), 0.0, None)
    if isinstance(dp.base.U, BallSet):
        L.add("ball", (nu,), 0.0, None)
    return L


def assemble_conditions(dp: DiscreteProblem, q, case_pattern=None, subgrads=None) -> ConditionSystem:
    """Linear conditions on the duals for a fixed ``gamma`` sign pattern.

    ``case_pattern`` is a ``nu x m`` nested list of cell codes; ambiguous
    cells default to ``Z`` when it is omitted.
    """
    pr = _primal(dp, q, subgrads)
    return _assemble(dp, pr, case_pattern)


def _assemble(dp, pr: _Primal, case_pattern=None) -> ConditionSystem:
    q, base = pr.q, dp.base
    nu, m = pr.eta.shape
    n, d = base.n, base.d
    forced, ambiguous = case_cells(pr)
    if case_pattern is None:
        pattern = [[c if c is not None else ZERO for c in row] for row in forced]
    else:
        pattern = [list(row) for row in case_pattern]
        for j in range(nu):
            for i in range(m):
                if forced[j][i] is not None and pattern[j][i] != forced[j][i]:
                    raise ValueError(f"cell ({j}, {i}) is forced to {forced[j][i]}")
    L = _layout(dp, pr)
    R = _Rows
    h = pr.h
    tu, tx, ta, tb = pr.theta
    sub = pr.sub
    eq, ineq = {}, {}

    def y(j):
        return R.var(L, "px", j + 1) - R.lam_times(L, tx[j] / h[j] + sub["vx"][j])

    conx, cony, cona, conb, dac5, rule_eq, rule_le = [], [], [], [], [], [], []
    for j in range(nu):
        yj = y(j)
        A = q.a[j]
        conx.append((1.0 / h[j]) * (R.var(L, "px", j + 1) - R.var(L, "px", j))
                    - R.lam_times(L, sub["wx"][j])
                    + yj.left(pr.jx[j].T)
                    - R.var(L, "gam", j).left(A.T))
        cony.append((-1.0 / h[j]) * R.var(L, "psi", j)
                    - R.lam_times(L, tu[j] / h[j] + sub["wu"][j])
                    - yj.left(-pr.ju[j].T))
        if dp.a_decision:
            blocks = []
            for i in range(m):
                row = (1.0 / h[j]) * (R.var(L, "pa", j + 1, i) - R.var(L, "pa", j, i))
                row = row - R.lam_times(L, sub["wa"][j].reshape(m, n)[i])
                al = R.var(L, "al1", j, i) + R.var(L, "al2", j, i)
                row = row - (2.0 / h[j]) * al.left(A[i][:, None])
                row = row - R.var(L, "gam", j, i).left(q.x[j][:, None])
                row = row - pr.eta[j, i] * yj
                blocks.append(row)
            cona.append(R.stack(blocks))
            dac5.append(R.var(L, "pa", j + 1) - R.lam_times(L, sub["va"][j] + ta[j].ravel() / h[j]))
        if dp.b_decision:
            conb.append((1.0 / h[j]) * (R.var(L, "pb", j + 1) - R.var(L, "pb", j))
                        - R.lam_times(L, sub["wb"][j]) + R.var(L, "gam", j))
            dac5.append(R.var(L, "pb", j + 1) - R.lam_times(L, sub["vb"][j] + tb[j] / h[j]))
        for i in range(m):
            code = pattern[j][i]
            ay = yj.left(A[i][None, :])
            if code in (POSITIVE, ZERO):
                rule_eq.append(ay)
            elif code == NEG:
                rule_le.append(ay)
            elif code == POS:
                rule_le.append(-ay)
            if code in (INACTIVE, NEG):
                L.fix(L.index("gam", j, i), 0.0, 0.0)
            elif code == POS:
                L.fix(L.index("gam", j, i), 0.0, None)
        # psi in N(u_j; U)
        U = base.U
        if isinstance(U, BoxSet):
            for k, (lo, hi) in enumerate(U.normal_bounds(q.u[j])):
                L.fix(L.index("psi", j, k), lo, hi)
    eq["conx"] = R.stack(conx)
    eq["cony"] = R.stack(cony)
    if cona:
        eq["cona"] = R.stack(cona)
    if conb:
        eq["conb"] = R.stack(conb)
    if dac5:
        eq["dac5"] = R.stack(dac5)
    if isinstance(base.U, BallSet):
        U = base.U
        rows = []
        for j in range(nu):
            on_sphere = abs(np.linalg.norm(q.u[j] - U.center) - U.radius) <= 1e-9 * max(1.0, U.radius)
            if not on_sphere:
                L.fix(L.index("ball", j), 0.0, 0.0)
            rows.append(R.var(L, "psi", j) - R.var(L, "ball", j).left((q.u[j] - U.center)[:, None]))
        eq["ball_normal"] = R.stack(rows)

    # endpoint
    A_nu = q.a[-1]
    eq["nmutx"] = -R.var(L, "px", nu) - R.lam_times(L, pr.grad_phi) - R.var(L, "xi").left(A_nu.T)
    for i in range(m):
        if not pr.active[nu, i]:
            L.fix(L.index("xi", i), 0.0, 0.0)
    if dp.a_decision:
        blocks = []
        for i in range(m):
            al = R.var(L, "al1", nu, i) + R.var(L, "al2", nu, i)
            blocks.append(R.var(L, "pa", nu, i) + 2.0 * al.left(A_nu[i][:, None])
                          + R.var(L, "xi", i).left(q.x[-1][:, None]))
        eq["nmuta"] = R.stack(blocks)
        for j in range(nu + 1):
            for i in range(m):
                if not pr.band_hi[j, i]:
                    L.fix(L.index("al1", j, i), 0.0, 0.0)
                if not pr.band_lo[j, i]:
                    L.fix(L.index("al2", j, i), 0.0, 0.0)
    if dp.b_decision:
        eq["nmutb"] = R.var(L, "pb", nu) - R.var(L, "xi")
    if rule_eq:
        eq["gamma_rule"] = R.stack(rule_eq)
    if rule_le:
        ineq["gamma_rule_sign"] = R.stack(rule_le)
    return ConditionSystem(L, eq, ineq, pattern, pr)


# --------------------------------------------------------------------------
# LP


def _solve_lp(sys: ConditionSystem, lb, ub, extra_eq=None, soft=None):
    """Minimize ``r`` with every equality row in ``[-r, r]`` and inequality rows ``<= r``.

    With ``soft`` given, only the named families get the slack ``r``; all
    other rows must hold exactly.
    """
    nz = sys.layout.size
    rows, rhs = [], []

    def slack(name, k):
        return -np.ones((k, 1)) if soft is None or name in soft else np.zeros((k, 1))

    for name, rws in sys.equalities.items():
        k = rws.M.shape[0]
        rows.append(np.hstack([rws.M, slack(name, k)]))
        rhs.append(-rws.c)
        rows.append(np.hstack([-rws.M, slack(name, k)]))
        rhs.append(rws.c)
    for name, rws in sys.inequalities.items():
        rows.append(np.hstack([rws.M, slack(name, rws.M.shape[0])]))
        rhs.append(-rws.c)
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    A_eq = b_eq = None
    if extra_eq is not None:
        coef, val = extra_eq
        A_eq = np.append(coef, 0.0)[None, :]
        b_eq = np.array([val])
    cost = np.zeros(nz + 1)
    cost[-1] = 1.0
    bounds = list(zip(lb, ub)) + [(0.0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None, np.inf
    return res.x[:nz], float(res.x[-1])


def _extract(dp, sys: ConditionSystem, z, mode) -> DualCertificate:
    L, pr = sys.layout, sys.primal
    nu, m = pr.eta.shape
    n = dp.base.n

    def block(name):
        start, shape = L.blocks[name]
        k = int(np.prod(shape)) if shape else 1
        return z[start:start + k].reshape(shape) if shape else float(z[start])

    eta = np.vstack([pr.eta, block("xi")[None, :]])
    a1 = block("al1") if L.has("al1") else np.zeros((nu + 1, m))
    a2 = block("al2") if L.has("al2") else np.zeros((nu + 1, m))
    return DualCertificate(
        lam=float(block("lam")), eta=eta, gamma=block("gam"), px=block("px"),
        pa=block("pa") if L.has("pa") else None, pb=block("pb") if L.has("pb") else None,
        psi=block("psi"), alpha1=a1, alpha2=a2, case_pattern=sys.pattern,
        subgradients=dict(pr.sub), mode=mode)


def _abnormal_choices(sys: ConditionSystem, mode):
    """Coordinates whose fixing to +-1 enforces nontriviality when ``lam = 0``."""
    L = sys.layout
    names = ["gam"]
    if L.has("al1"):
        names.append("alsum")
    if mode == "th71":
        names += ["xi", "pxhead", "psi"]
        if L.has("pa"):
            names.append("pa0")
        if L.has("pb"):
            names.append("pb0")
    out = []
    for name in names:
        if name == "alsum":
            for flat1, flat2 in zip(L.span("al1"), L.span("al2")):
                for sign in (1.0, -1.0):
                    lo1, hi1 = L.lb[flat1], L.ub[flat1]
                    lo2, hi2 = L.lb[flat2], L.ub[flat2]
                    if (hi1 is None or hi1 > 0) and sign > 0 or (lo2 is None or lo2 < 0) and sign < 0:
                        coef = np.zeros(L.size)
                        coef[flat1] = coef[flat2] = 1.0
                        out.append(("eq", coef, sign))
            continue
        if name == "pxhead":
            flats = L.span("px")[:-L.blocks["px"][1][1]]
        elif name == "pa0":
            flats = L.span("pa", 0)
        elif name == "pb0":
            flats = L.span("pb", 0)
        else:
            flats = L.span(name)
        for flat in flats:
            lo, hi = L.lb[flat], L.ub[flat]
            for sign in (1.0, -1.0):
                if (sign > 0 and (hi is None or hi > 0)) or (sign < 0 and (lo is None or lo < 0)):
                    out.append(("fix", int(flat), sign))
    return out


def _patterns(forced, ambiguous, cap):
    total = 3 ** len(ambiguous)
    exceeded = total > cap

    def gen():
        for k, combo in enumerate(itertools.product((NEG, POS, ZERO), repeat=len(ambiguous))):
            if k >= cap:
                return
            pat = [list(row) for row in forced]
            for (j, i), code in zip(ambiguous, combo):
                pat[j][i] = code
            yield pat

    return gen(), exceeded


def find_certificate(dp: DiscreteProblem, q, mode="th72", tol=1e-8, subgrads=None,
                     pattern_cap=PATTERN_CAP, raise_on_budget=False) -> DualCertificate:
    """Search all admissible sign patterns for a certificate.

    The normal branch fixes ``lam = 1``; the abnormal branch fixes
    ``lam = 0`` and one nontriviality coordinate to +-1.  The returned
    certificate is normalized.  ``residual`` is the normalized infinity norm
    of the condition residuals; ``normal_residual`` is the least residual
    with ``lam = 1`` before normalization, so a value bounded away from 0
    rejects every multiplier tuple with ``lam > 0``.
    """
    if mode not in ("th71", "th72"):
        raise ValueError("mode must be 'th71' or 'th72'")
    pr = _primal(dp, q, subgrads)
    forced, ambiguous = case_cells(pr)
    gen, exceeded = _patterns(forced, ambiguous, pattern_cap)
    if exceeded and raise_on_budget:
        raise PatternBudgetExceeded(f"{3 ** len(ambiguous)} patterns exceed the cap {pattern_cap}")
    best_normal = (np.inf, None, None)
    best_abnormal = (np.inf, None, None)
    tried = 0
    for pat in gen:
        tried += 1
        sys = _assemble(dp, pr, pat)
        L = sys.layout
        lam = L.index("lam")
        lb, ub = list(L.lb), list(L.ub)
        lb[lam] = ub[lam] = 1.0
        z, r = _solve_lp(sys, lb, ub)
        if z is not None and r < best_normal[0]:
            best_normal = (r, z, sys)
        if best_normal[0] <= tol:
            continue
        for kind, a, sign in _abnormal_choices(sys, mode):
            lb, ub = list(L.lb), list(L.ub)
            lb[lam] = ub[lam] = 0.0
            if kind == "fix":
                lb[a] = ub[a] = sign
                z, r = _solve_lp(sys, lb, ub)
            else:
                z, r = _solve_lp(sys, lb, ub, (a, sign))
            if z is None:
                continue
            cert = _extract(dp, sys, z, mode)
            s = cert.ntc1_sum() if mode == "th72" else cert.ntc_sum()
            rn = r / s if s > 0 else r
            if rn < best_abnormal[0]:
                best_abnormal = (rn, z, sys)
    normal_r = best_normal[0]
    normal_families = {}
    if best_normal[1] is not None:
        cert = _extract(dp, best_normal[2], best_normal[1], mode)
        normal_families = check_certificate(dp, q, cert)["families"]
        s = cert.ntc1_sum() if mode == "th72" else cert.ntc_sum()
        normal_norm = normal_r / s
    else:
        normal_norm = np.inf
    if normal_norm <= tol or best_abnormal[1] is None or normal_norm <= best_abnormal[0]:
        if best_normal[1] is None:
            raise PrimalInfeasible("no pattern admits a dual solution")
        cert, res, abnormal = _extract(dp, best_normal[2], best_normal[1], mode), normal_norm, False
    else:
        cert = _extract(dp, best_abnormal[2], best_abnormal[1], mode)
        res, abnormal = best_abnormal[0], True
    cert = cert.normalized()
    cert.residual = float(res)
    cert.normal_residual = float(normal_r)
    cert.abnormal = abnormal
    cert.patterns_tried = tried
    cert.budget_exceeded = exceeded
    cert.families = check_certificate(dp, q, cert)["families"]
    cert.normal_families = normal_families
    if normal_r > tol:
        cert.isolation = isolate_families(dp, pr, forced, ambiguous, pattern_cap)
    return cert


def isolate_families(dp, pr, forced, ambiguous, pattern_cap=PATTERN_CAP) -> dict:
    """For each family, the least residual with ``lam = 1`` when only that family may be violated.

    ``inf`` means the remaining conditions cannot hold exactly with a normal
    multiplier whatever that family does; a finite value names a family
    whose violation alone explains the failure.
    """
    gen, _ = _patterns(forced, ambiguous, pattern_cap)
    out = {}
    for pat in gen:
        sys = _assemble(dp, pr, pat)
        lam = sys.layout.index("lam")
        lb, ub = list(sys.layout.lb), list(sys.layout.ub)
        lb[lam] = ub[lam] = 1.0
        for name in list(sys.equalities) + list(sys.inequalities):
            _, r = _solve_lp(sys, lb, ub, soft={name})
            out[name] = min(out.get(name, np.inf), r)
    return {k: float(v) for k, v in out.items()}


# --------------------------------------------------------------------------
# independent evaluation


def check_certificate(dp: DiscreteProblem, q, cert: DualCertificate, tol=1e-8) -> dict:
    """Residual of every condition family evaluated directly from the formulas."""
    base = dp.base
    nu, n, m, d = q.nu, base.n, base.m, base.d
    shapes = {"eta": (nu + 1, m), "gamma": (nu, m), "px": (nu + 1, n), "psi": (nu, d),
              "alpha1": (nu + 1, m), "alpha2": (nu + 1, m)}
    for name, shape in shapes.items():
        if np.shape(getattr(cert, name)) != shape:
            raise DimensionMismatch(f"{name} has shape {np.shape(getattr(cert, name))}, expected {shape}")
    if dp.a_decision and (cert.pa is None or np.shape(cert.pa) != (nu + 1, m, n)):
        raise DimensionMismatch("pa missing or misshaped")
    if dp.b_decision and (cert.pb is None or np.shape(cert.pb) != (nu + 1, m)):
        raise DimensionMismatch("pb missing or misshaped")
    sub = cert.subgradients or subgradients(dp, q)
    tu, tx, ta, tb = theta_terms(dp, q)
    h = q.h
    lam = cert.lam
    eta, gam, px, psi = cert.eta, cert.gamma, cert.px, cert.psi
    xi = eta[-1]
    slack = np.einsum("jmn,jn->jm", q.a, q.x) - q.b
    atol = _tol_for(q.x, q.b)
    fam = {}

    xd = q.xdot()
    prim = [np.abs(xd[j] - base.g(q.x[j], q.u[j]) + q.a[j].T @ eta[j]).max(initial=0.0) for j in range(nu)]
    fam["primal87"] = float(max(prim, default=0.0))

    conx, cony, cona, conb, dac5, rule, gmp, psin = [], [], [], [], [], [], [], []
    for j in range(nu):
        yj = px[j + 1] - lam * (tx[j] / h[j] + sub["vx"][j])
        gx = np.atleast_2d(base.g.jac_x(q.x[j], q.u[j]))
        gu = np.atleast_2d(base.g.jac_u(q.x[j], q.u[j]))
        r = (px[j + 1] - px[j]) / h[j] - lam * sub["wx"][j] - gx.T @ (-yj) - q.a[j].T @ gam[j]
        conx.append(np.abs(r).max())
        r = -psi[j] / h[j] - lam * tu[j] / h[j] - lam * sub["wu"][j] - gu.T @ (-yj)
        cony.append(np.abs(r).max())
        if dp.a_decision:
            al = cert.alpha1[j] + cert.alpha2[j]
            r = ((cert.pa[j + 1] - cert.pa[j]) / h[j] - lam * sub["wa"][j].reshape(m, n)
                 - (2.0 / h[j]) * al[:, None] * q.a[j] - gam[j][:, None] * q.x[j][None, :]
                 - eta[j][:, None] * yj[None, :])
            cona.append(np.abs(r).max())
            dac5.append(np.abs(cert.pa[j + 1] - lam * (sub["va"][j].reshape(m, n) + ta[j] / h[j])).max())
        if dp.b_decision:
            r = (cert.pb[j + 1] - cert.pb[j]) / h[j] - lam * sub["wb"][j] + gam[j]
            conb.append(np.abs(r).max())
            dac5.append(np.abs(cert.pb[j + 1] - lam * (sub["vb"][j] + tb[j] / h[j])).max())
        ay = q.a[j] @ yj
        for i in range(m):
            if slack[j, i] < -atol:
                rule.append(abs(gam[j, i]))
            elif eta[j, i] > 1e-10:
                rule.append(abs(ay[i]))
            else:
                # closest admissible branch: N (gamma = 0, ay <= 0), P (gamma >= 0, ay >= 0), Z (ay = 0)
                rule.append(min(max(abs(gam[j, i]), max(ay[i], 0.0)),
                                max(max(-gam[j, i], 0.0), max(-ay[i], 0.0)),
                                abs(ay[i])))
        U = base.U
        gmp.append(max(0.0, U.support(psi[j]) - float(psi[j] @ q.u[j])))
        if isinstance(U, BoxSet):
            viol = 0.0
            for k, (lo, hi) in enumerate(U.normal_bounds(q.u[j])):
                if lo is not None:
                    viol = max(viol, lo - psi[j, k])
                if hi is not None:
                    viol = max(viol, psi[j, k] - hi)
            psin.append(viol)
        else:
            psin.append(gmp[-1])
    fam["conx"] = float(max(conx, default=0.0))
    fam["cony"] = float(max(cony, default=0.0))
    if dp.a_decision:
        fam["cona"] = float(max(cona, default=0.0))
    if dp.b_decision:
        fam["conb"] = float(max(conb, default=0.0))
    if dac5:
        fam["dac5"] = float(max(dac5))
    fam["gamma_rule"] = float(max(rule, default=0.0))
    fam["psi_normal"] = float(max(psin, default=0.0))
    fam["gmp"] = float(max(gmp, default=0.0))

    trans = [np.abs(-px[nu] - lam * np.asarray(base.phi.grad(q.x[-1])) - q.a[-1].T @ xi).max()]
    if dp.a_decision:
        al = cert.alpha1[nu] + cert.alpha2[nu]
        trans.append(np.abs(cert.pa[nu] + 2.0 * al[:, None] * q.a[-1] + xi[:, None] * q.x[-1][None, :]).max())
    if dp.b_decision:
        trans.append(np.abs(cert.pb[nu] - xi).max())
    fam["transversality"] = float(max(trans))

    comp = np.abs(eta * np.minimum(slack, 0.0))
    comp = np.where(slack < -atol, np.abs(eta), comp)
    fam["complementarity"] = float(comp.max(initial=0.0))

    signs = [max(0.0, -lam), max(0.0, -eta.min(initial=0.0)), max(0.0, -cert.alpha1.min(initial=0.0)),
             max(0.0, cert.alpha2.max(initial=0.0))]
    if dp.a_decision:
        norms = np.linalg.norm(q.a, axis=2)
        off_hi = np.abs(norms - (1 + dp.delta_k)) > 1e-9
        off_lo = np.abs(norms - (1 - dp.delta_k)) > 1e-9
        signs.append(float(np.abs(np.where(off_hi, cert.alpha1, 0.0)).max(initial=0.0)))
        signs.append(float(np.abs(np.where(off_lo, cert.alpha2, 0.0)).max(initial=0.0)))
    fam["signs"] = float(max(signs))
    fam["ntc"] = 0.0 if cert.ntc_sum() > tol else 1.0
    fam["ntc1"] = 0.0 if cert.ntc1_sum() > tol else 1.0
    worst = max(fam.values())
    return {"families": fam, "max": float(worst), "ok": bool(worst <= tol)}


def kkt_residual_interior(dp: DiscreteProblem, q) -> float:
    """Classical KKT residual when no constraint is ever active.

    Uses the reduced gradient of the cost with respect to the controls of
    the explicit recursion ``x_{j+1} = x_j + h_j g(x_j, u_j)`` and the
    distance of its negative to ``N(u_j; U)`` in the infinity norm; the
    proximity and ``xdot``-dependent terms enter through their gradients.
    """
    base = dp.base
    nu = q.nu
    h = q.h
    sub = subgradients(dp, q)
    tu, tx, _, _ = theta_terms(dp, q)
    # adjoint of the recursion for the Lagrangian-free cost
    lamx = np.asarray(base.phi.grad(q.x[-1]), dtype=float)
    grads = [None] * nu
    for j in reversed(range(nu)):
        gx = np.atleast_2d(base.g.jac_x(q.x[j], q.u[j]))
        gu = np.atleast_2d(base.g.jac_u(q.x[j], q.u[j]))
        # d/dx_{j+1} of the running terms through xdot_j, plus proximity
        vx = sub["vx"][j] + tx[j] / h[j]
        mu = lamx + vx
        grads[j] = h[j] * (sub["wu"][j] + tu[j] / h[j]) + h[j] * gu.T @ mu
        lamx = mu + h[j] * (sub["wx"][j] + gx.T @ mu) - vx
    worst = 0.0
    for j in range(nu):
        neg = -grads[j]
        U = base.U
        if isinstance(U, BoxSet):
            for k, (lo, hi) in enumerate(U.normal_bounds(q.u[j])):
                if lo is not None:
                    worst = max(worst, lo - neg[k])
                if hi is not None:
                    worst = max(worst, neg[k] - hi)
        else:
            worst = max(worst, U.support(neg) - float(neg @ q.u[j]))
    return float(worst)
