"""The compiled kernels and their plain Python bodies must agree."""

import numpy as np
from hypothesis import given, strategies as st
from scipy.optimize import nnls as scipy_nnls

from polysweep import kernels
from polysweep._accel import USE_NUMBA

seeds = st.integers(0, 2 ** 31 - 1)


def _both(fn, *args):
    return fn(*args), fn.py_func(*args)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_py_func_is_reachable():
    assert callable(kernels.nnls.py_func)
    assert (kernels.nnls is not kernels.nnls.py_func) == USE_NUMBA


@given(seeds, st.integers(1, 6), st.integers(1, 8))
def test_nnls_against_scipy(seed, m, k):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(m, k))
    v = rng.normal(size=m)
    x, rn, status = kernels.nnls(M, v, 400)
    assert status == kernels.OK
    ref, _ = scipy_nnls(M, v)
    # scipy's reported rnorm can disagree with its own x on wide systems; recompute it
    rref = np.linalg.norm(M @ ref - v)
    assert np.all(x >= 0)
    assert rn <= rref + 1e-9
    w = M.T @ (v - M @ x)
    assert np.all(w <= 1e-9) and np.all(np.abs(w[x > 0]) <= 1e-9)
    assert _same(kernels.nnls(M, v, 400), kernels.nnls.py_func(M, v, 400))


@given(seeds, st.integers(1, 4), st.integers(1, 6))
def test_min_norm_multipliers_paths_agree(seed, n, k):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, k))
    v = M @ np.abs(rng.normal(size=k))
    fast, slow = _both(kernels.min_norm_multipliers, M, v, 400)
    assert _same(fast, slow)
    np.testing.assert_allclose(M @ fast[0], v, atol=1e-8 * (1 + np.abs(v).max()))


@given(seeds, st.integers(1, 4), st.integers(1, 6))
def test_project_qp_paths_agree(seed, n, m):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(m, n))
    d = rng.uniform(0.1, 1.0, size=m)
    y = 3.0 * rng.normal(size=n)
    args = (C, d, y, np.zeros((0, n)), np.zeros(0), 1e-12, 500)
    fast, slow = _both(kernels.project_qp, *args)
    assert fast[-1] == slow[-1] == kernels.OK
    assert _same(fast[:-1], slow[:-1])


def test_shoot_explicit_paths_agree():
    nu = 40
    A = np.tile(np.array([[[-1.0, -2.0]]]), (nu + 1, 1, 1))
    B = np.full((nu + 1, 1), -2.0)
    U = np.tile([-0.4, 0.1], (nu, 1))
    U[: nu // 2] = [-1.0, -1.0]
    h = np.full(nu, 1.0 / nu)
    args = (A, B, np.array([1.5, 1.0]), np.zeros((2, 2)), np.eye(2), np.zeros(2), U, h, 1e-9, 200)
    fast, slow = _both(kernels.shoot_explicit, *args)
    assert _same(fast, slow)
    np.testing.assert_allclose(fast[0][-1], [0.82, 0.59], atol=1e-12)


@given(seeds)
def test_rect_sq_gap_paths_agree(seed):
    rng = np.random.default_rng(seed)
    grid = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 20)]))
    a, b = rng.normal(size=(21, 2)), rng.normal(size=(21, 2))
    fast, slow = _both(kernels.rect_sq_gap, grid, a, b)
    assert np.isclose(fast, slow, rtol=1e-12)
    assert np.isclose(fast, np.sum(np.diff(grid) * np.sum((a - b) ** 2, axis=1)), rtol=1e-12)


def test_disable_flag_runs_the_python_path():
    import os
    import subprocess
    import sys

    code = ("from polysweep._accel import USE_NUMBA; from polysweep import example8 as e;"
            "q = e.optimal_quadruple(2); assert not USE_NUMBA;"
            "print(repr(float(q.x[-1][0])), repr(float(q.x[-1][1])))")
    env = dict(os.environ, POLYSWEEP_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    x = [float(s) for s in out.stdout.split()]
    np.testing.assert_allclose(x, [0.82, 0.59], atol=1e-10)


def test_nnls_does_not_cycle_on_nearly_parallel_columns():
    # columns 2 and 3 are almost antiparallel; the exact fit needs large weights
    M = np.array([[1.0424935, -0.93402441, 1.05162376], [1.7296512, -0.29874521, 0.33578336]])
    v = M @ np.array([0.0, 5847.63766409, 5197.7943152])
    for fn in (kernels.nnls, kernels.nnls.py_func):
        x, rn, status = fn(M, v, 400)
        assert status == kernels.OK
        assert rn <= 1e-9 * np.abs(v).max()
        assert rn <= scipy_nnls(M, v)[1] + 1e-9
    for fn in (kernels.min_norm_multipliers, kernels.min_norm_multipliers.py_func):
        x, rn, status = fn(M, v, 400)
        assert status == kernels.OK and np.all(x >= 0)
        assert np.abs(M @ x - v).max() <= 1e-9
