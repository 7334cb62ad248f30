"""Time the numeric kernels compiled with numba against their plain Python bodies.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both paths run in one process: the compiled kernel is called directly and
the Python fallback through ``kernel.py_func``.  With
``POLYSWEEP_DISABLE_NUMBA=1`` only the fallback column is meaningful.
Results also serve as a cross-check: the two paths must agree.
"""

import argparse
import time

import numpy as np

from polysweep import kernels
from polysweep._accel import USE_NUMBA


def _time(fn, args, repeat):
    fn(*args)  # compile / warm up
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    # long explicit shooting run through a single halfspace
    nu = 2000
    A = np.tile(np.array([[[-1.0, -2.0]]]), (nu + 1, 1, 1))
    B = np.full((nu + 1, 1), -2.0)
    U = np.tile([-0.4, 0.1], (nu, 1))
    U[: nu // 2] = [-1.0, -1.0]
    h = np.full(nu, 1.0 / nu)
    shoot = (A, B, np.array([1.5, 1.0]), np.zeros((2, 2)), np.eye(2), np.zeros(2), U, h, 1e-9, 200)

    # projection onto a random polytope around the origin
    m, n = 30, 6
    C = rng.normal(size=(m, n))
    d = rng.uniform(0.5, 1.5, size=m)
    y = 4.0 * rng.normal(size=n)
    proj = (C, d, y, np.zeros((0, n)), np.zeros(0), 1e-12, 1000)

    M = rng.normal(size=(8, 12))
    v = M @ np.abs(rng.normal(size=12))
    nnls = (M, v, 400)

    grid = np.linspace(0.0, 1.0, 5001)
    gap = (grid, rng.normal(size=(5000, 3)), rng.normal(size=(5000, 3)))
    return {
        "shoot_explicit": (kernels.shoot_explicit, shoot),
        "project_qp": (kernels.project_qp, proj),
        "nnls": (kernels.nnls, nnls),
        "min_norm_multipliers": (kernels.min_norm_multipliers, nnls),
        "rect_sq_gap": (kernels.rect_sq_gap, gap),
    }


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"numba enabled: {USE_NUMBA}")
    print(f"{'kernel':22s} {'compiled [ms]':>14s} {'python [ms]':>12s} {'speedup':>8s}  agree")
    for name, (fn, fargs) in _cases(rng).items():
        fast = _time(fn, fargs, args.repeat)
        slow = _time(fn.py_func, fargs, max(1, args.repeat // 4))
        same = _agree(fn(*fargs), fn.py_func(*fargs))
        print(f"{name:22s} {1e3 * fast:14.3f} {1e3 * slow:12.3f} {slow / fast:8.1f}  {same}")


if __name__ == "__main__":
    main()
