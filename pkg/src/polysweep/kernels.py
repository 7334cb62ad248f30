"""Hot numeric kernels.

Every kernel here is a plain function over float64 arrays, compiled by
numba unless ``POLYSWEEP_DISABLE_NUMBA`` is set (see ``_accel``).  The
uncompiled original is always reachable as ``kernel.py_func``, which is what
the benchmark and the dual-path tests call.

Status codes returned by the solvers:

    0  converged
    1  infeasible (projection) / not applicable
    2  iteration budget exhausted
"""

import numpy as np

from ._accel import jit

OK = 0
INFEASIBLE = 1
MAXITER = 2


@jit
def nnls(M, v, maxiter):
    """Lawson-Hanson nonnegative least squares ``min ||M x - v||, x >= 0``.

    Returns ``(x, rnorm, status)``.
    """
    m, k = M.shape
    x = np.zeros(k)
    if k == 0:
        return x, np.sqrt(np.sum(v * v)), OK
    passive = np.zeros(k, dtype=np.bool_)
    eps = np.finfo(np.float64).eps
    scale = 1.0
    for i in range(m):
        for j in range(k):
            if abs(M[i, j]) > scale:
                scale = abs(M[i, j])
    vmax = 1.0
    for i in range(m):
        if abs(v[i]) > vmax:
            vmax = abs(v[i])
    tol = 10.0 * eps * max(m, k) * scale * vmax
    w = M.T @ (v - M @ x)
    it = 0
    status = OK
    while True:
        # roundoff in w grows with |M x|, not only with |v|
        xsum = 0.0
        for j in range(k):
            xsum += abs(x[j])
        wbest = tol * (1.0 + scale * xsum / vmax)
        jbest = -1
        for j in range(k):
            if not passive[j] and w[j] > wbest:
                wbest = w[j]
                jbest = j
        if jbest < 0:
            break
        passive[jbest] = True
        while True:
            idx = np.nonzero(passive)[0]
            sub = np.ascontiguousarray(M[:, idx])
            sol = np.linalg.lstsq(sub, v)[0]
            s = np.zeros(k)
            for q in range(idx.size):
                s[idx[q]] = sol[q]
            feasible = True
            for q in range(idx.size):
                if s[idx[q]] <= 0.0:
                    feasible = False
                    break
            if feasible:
                x = s
                break
            it += 1
            if it > maxiter:
                status = MAXITER
                x = np.maximum(s, 0.0)
                break
            alpha = np.inf
            for q in range(idx.size):
                jj = idx[q]
                if s[jj] <= 0.0:
                    denom = x[jj] - s[jj]
                    if denom > 0.0:
                        ratio = x[jj] / denom
                        if ratio < alpha:
                            alpha = ratio
            if not np.isfinite(alpha):
                alpha = 0.0
            x = x + alpha * (s - x)
            for q in range(idx.size):
                jj = idx[q]
                if x[jj] <= tol:
                    x[jj] = 0.0
                    passive[jj] = False
        if status != OK:
            break
        w = M.T @ (v - M @ x)
    r = M @ x - v
    return x, np.sqrt(np.sum(r * r)), status


@jit
def project_qp(C, d, y, E, e, tol, maxiter):
    """Euclidean projection of ``y`` onto ``{x : C x <= d, E x = e}``.

    Dual active-set method (Goldfarb-Idnani with identity Hessian), started
    from the unconstrained minimizer ``y``.  Violated inequalities are taken
    in increasing index order, which rules out cycling.  Returns
    ``(x, mu, lam, status)`` with ``y - x = C^T mu + E^T lam`` and ``mu >= 0``.
    """
    n = y.size
    mi = C.shape[0]
    me = E.shape[0]
    tot = mi + me
    # rows 0..me-1 are equalities, me..tot-1 inequalities
    normals = np.zeros((tot, n))
    rhs = np.zeros(tot)
    for i in range(me):
        normals[i] = E[i]
        rhs[i] = e[i]
    for i in range(mi):
        normals[me + i] = C[i]
        rhs[me + i] = d[i]
    sign = np.ones(tot)
    x = y.copy()
    u = np.zeros(tot)
    active = np.zeros(tot, dtype=np.bool_)
    order = np.zeros(tot, dtype=np.int64)
    nact = 0
    it = 0
    while True:
        # choose the constraint to add
        p = -1
        for i in range(me):
            if not active[i]:
                s_i = normals[i] @ x - rhs[i]
                if abs(s_i) > tol:
                    sign[i] = 1.0 if s_i > 0.0 else -1.0
                    p = i
                    break
                else:
                    # satisfied equality: make it active with zero multiplier
                    # only when its normal is independent of the active set
                    pass
        if p < 0:
            for i in range(me, tot):
                if not active[i]:
                    if normals[i] @ x - rhs[i] > tol:
                        p = i
                        break
        if p < 0:
            break
        cp = sign[p] * normals[p]
        while True:
            it += 1
            if it > maxiter:
                mu = np.zeros(mi)
                lam = np.zeros(me)
                for i in range(me):
                    lam[i] = sign[i] * u[i]
                for i in range(mi):
                    mu[i] = u[me + i]
                return x, mu, lam, MAXITER
            s_p = sign[p] * (normals[p] @ x - rhs[p])
            if s_p <= tol and p >= me:
                break
            if p < me and abs(s_p) <= tol:
                break
            if nact > 0:
                N = np.zeros((n, nact))
                for q in range(nact):
                    N[:, q] = sign[order[q]] * normals[order[q]]
                r = np.linalg.lstsq(N, cp)[0]
                z = cp - N @ r
            else:
                r = np.zeros(0)
                z = cp.copy()
            zz = z @ z
            t1 = np.inf
            kblock = -1
            for q in range(nact):
                idx = order[q]
                if idx >= me and r[q] > 0.0:
                    ratio = u[idx] / r[q]
                    if ratio < t1:
                        t1 = ratio
                        kblock = q
            scale = 1.0 + cp @ cp
            if zz > 1e-14 * scale:
                t2 = s_p / zz
            else:
                t2 = np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                mu = np.zeros(mi)
                lam = np.zeros(me)
                for i in range(me):
                    lam[i] = sign[i] * u[i]
                for i in range(mi):
                    mu[i] = u[me + i]
                return x, mu, lam, INFEASIBLE
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x - t * z
            for q in range(nact):
                u[order[q]] -= t * r[q]
            u[p] += t
            if t2 <= t1:
                active[p] = True
                order[nact] = p
                nact += 1
                break
            # drop the blocking constraint and retry the same p
            dropped = order[kblock]
            u[dropped] = 0.0
            active[dropped] = False
            for q in range(kblock, nact - 1):
                order[q] = order[q + 1]
            nact -= 1
    mu = np.zeros(mi)
    lam = np.zeros(me)
    for i in range(me):
        lam[i] = sign[i] * u[i]
    for i in range(mi):
        mu[i] = u[me + i]
    return x, mu, lam, OK


@jit
def min_norm_multipliers(M, v, maxiter):
    """Minimum-norm ``x >= 0`` among the NNLS minimizers of ``||M x - v||``."""
    k = M.shape[1]
    x, rnorm, status = nnls(M, v, maxiter)
    if k <= 1 or status != OK:
        return x, rnorm, status
    if np.linalg.matrix_rank(M) == k:
        return x, rnorm, status
    target = M @ x
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    smax = S[0] if S.size > 0 else 0.0
    r = 0
    for q in range(S.size):
        if S[q] > 1e-12 * max(smax, 1.0):
            r += 1
    E = np.zeros((r, k))
    e = np.zeros(r)
    for q in range(r):
        E[q] = Vt[q]
        e[q] = (U[:, q] @ target) / S[q]
    C = -np.eye(k)
    d = np.zeros(k)
    xm, mu, lam, st = project_qp(C, d, np.zeros(k), E, e, 1e-13, 50 * (k + r) + 50)
    if st != OK:
        return x, rnorm, status
    xm = np.maximum(xm, 0.0)
    res = M @ xm - v
    rm = np.sqrt(np.sum(res * res))
    # large multipliers on nearly dependent columns: the refinement may cost accuracy
    slack = 100.0 * np.finfo(np.float64).eps * (np.sqrt(np.sum(v * v)) + smax * np.sqrt(np.sum(x * x)))
    if rm > rnorm + slack:
        return x, rnorm, status
    return xm, rm, OK


@jit
def shoot_explicit(A, B, x0, Gx, Gu, c, U, h, tol_scale, maxiter):
    """Explicit catching-up trajectory for affine ``g(x,u) = Gx x + Gu u + c``.

    ``A`` is ``(nu+1, m, n)``, ``B`` is ``(nu+1, m)``, ``U`` is ``(nu, d)``
    and ``h`` the ``nu`` step sizes.  At step ``j`` the drift is split into
    its tangent part and the minimum-norm normal part on the rows active at
    ``x_j``.  Returns ``(X, ETA, violation)`` where ``violation`` is the sum
    of constraint excesses beyond the activity tolerance over all states
    (0 for a feasible run).
    """
    nu = U.shape[0]
    n = x0.size
    m = B.shape[1]
    X = np.zeros((nu + 1, n))
    ETA = np.zeros((nu, m))
    X[0] = x0
    viol = 0.0
    for j in range(nu + 1):
        x = X[j]
        Aj = np.ascontiguousarray(A[j])
        bj = B[j]
        slack = Aj @ x - bj
        tol = tol_scale * (1.0 + np.sqrt(np.sum(x * x)) + np.sqrt(np.sum(bj * bj)))
        for i in range(m):
            if slack[i] > tol:
                viol += slack[i] - tol
        if j == nu:
            break
        drift = Gx @ x + Gu @ U[j] + c
        nact = 0
        for i in range(m):
            if slack[i] >= -tol:
                nact += 1
        step = drift.copy()
        if nact > 0:
            idx = np.zeros(nact, dtype=np.int64)
            q = 0
            for i in range(m):
                if slack[i] >= -tol:
                    idx[q] = i
                    q += 1
            M = np.ascontiguousarray(Aj[idx].T)
            eta, rn, st = min_norm_multipliers(M, drift, maxiter)
            for q in range(nact):
                ETA[j, idx[q]] = eta[q]
            step = drift - M @ eta
        X[j + 1] = x + h[j] * step
    return X, ETA, viol


@jit
def rect_sq_gap(grid, a_vals, b_vals):
    """Integral of ``||a(t) - b(t)||^2`` for piecewise-constant rows on ``grid``."""
    total = 0.0
    for i in range(grid.size - 1):
        dt = grid[i + 1] - grid[i]
        diff = a_vals[i] - b_vals[i]
        total += dt * np.sum(diff * diff)
    return total
