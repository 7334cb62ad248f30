"""Independent brute-force oracles shared by the unit and acceptance tests."""

import numpy as np

from polysweep.coderivatives import CONSTRAINED, EMPTY

# unit directions every degree, axes hit exactly
_ANG = np.deg2rad(np.arange(360))
DIRS = np.stack([np.cos(_ANG), np.sin(_ANG)], axis=1)
DIRS[np.abs(DIRS) < 1e-12] = 0.0


def _on_graph(z, tol=1e-13):
    """Membership in gph N_{R_-} = {x <= 0, v >= 0, x v = 0} for an array of points."""
    x, v = z[..., 0], z[..., 1]
    return (x <= tol) & (v >= -tol) & (np.minimum(np.abs(x), np.abs(v)) <= tol)


def graph_samples(npts=10_000, R=2.0):
    """Points spread over the two branches of the complementarity graph."""
    s = np.linspace(0.0, R, npts // 2)
    left = np.stack([-s, np.zeros_like(s)], axis=1)
    up = np.stack([np.zeros_like(s), s], axis=1)
    return np.vstack([left, up])


def frechet_normal(points, normals, step=1e-4):
    """``ok[k, l]``: ``normals[l]`` is a Frechet normal at ``points[k]``.

    The tangent cone is probed by short moves along every sampled direction;
    a normal must make a nonpositive product with all feasible ones.
    """
    t = np.minimum(step, 0.1 * np.maximum(np.abs(points).max(axis=1), step))
    trial = points[:, None, :] + t[:, None, None] * DIRS[None, :, :]
    tangent = _on_graph(trial)                                   # (K, D)
    prod = normals @ DIRS.T                                      # (L, D)
    bad = tangent[:, None, :] & (prod[None, :, :] > 1e-12)
    return ~bad.any(axis=2)


def limiting_coderiv_1d(x, v, w, radius=1e-2, samples=None):
    """Which of ``gamma = -1, 0, 1`` satisfy ``(gamma, -w)`` in the limiting normal cone at ``(x, v)``.

    The limiting cone is the outer limit of Frechet normals at graph points
    within ``radius``; since it is a closed union of cones, probing
    ``gamma`` in ``{-1, 0, 1}`` (with ``w`` normalized) fixes the descriptor.
    """
    pts = graph_samples() if samples is None else samples
    near = pts[np.hypot(pts[:, 0] - x, pts[:, 1] - v) <= radius]
    sw = float(np.sign(w))
    normals = np.array([[g, -sw] for g in (-1.0, 0.0, 1.0)])
    ok = frechet_normal(near, normals)
    return tuple(bool(b) for b in ok.any(axis=0))


def descriptor_from_probe(probes):
    """Map per-component ``(ok(-1), ok(0), ok(1))`` probes to (status, zero, nonneg, free)."""
    zero, nonneg, free = [], [], []
    for i, (neg, z, pos) in enumerate(probes):
        if not z:
            return EMPTY, (), (), ()
        if neg and pos:
            free.append(i)
        elif pos:
            nonneg.append(i)
        elif not neg:
            zero.append(i)
        else:
            raise AssertionError("nonpositive-only component cannot occur on this graph")
    return CONSTRAINED, tuple(zero), tuple(nonneg), tuple(free)


def structural_case(rng, kind):
    """A point ``(x, v, w)`` of the given structural kind for one component."""
    mag = rng.uniform(0.2, 1.5)
    wm = rng.uniform(0.2, 1.5)
    return {
        "x<0": (-mag, 0.0, rng.choice([-wm, 0.0, wm])),
        "v>0,w!=0": (0.0, mag, rng.choice([-wm, wm])),
        "v>0,w=0": (0.0, mag, 0.0),
        "0,0,w>0": (0.0, 0.0, wm),
        "0,0,w<0": (0.0, 0.0, -wm),
        "0,0,w=0": (0.0, 0.0, 0.0),
    }[kind]


KINDS = ["x<0", "v>0,w!=0", "v>0,w=0", "0,0,w>0", "0,0,w<0", "0,0,w=0"]


def project_enumerate_qp(C, d, y):
    """Projection onto ``{C x <= d}`` by trying every active subset (small m only)."""
    import itertools

    m, n = C.shape
    best, best_val = None, np.inf
    # relative cut: nearly parallel rows put subset vertices ~1e-9 off the other faces
    ftol = 1e-9 * (1.0 + np.abs(d).max() + np.abs(y).max()) * max(1.0, np.linalg.cond(C))
    for k in range(min(m, n) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            if S:
                A = C[S]
                try:
                    lam = np.linalg.solve(A @ A.T, A @ y - d[S])
                except np.linalg.LinAlgError:
                    lam = np.linalg.lstsq(A @ A.T, A @ y - d[S], rcond=None)[0]
                x = y - A.T @ lam
                if np.any(lam < -1e-10 * (1.0 + np.abs(lam).max())):
                    continue
            else:
                x = y.copy()
            if np.all(C @ x <= d + ftol):
                val = np.sum((x - y) ** 2)
                if val < best_val - 1e-14:
                    best, best_val = x, val
    return best
