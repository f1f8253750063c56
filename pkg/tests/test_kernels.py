import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from compactpoisson import _kernels_py, kernels

try:
    from compactpoisson import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def random_input(points, dim, seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(points, dim, dim))
    P = P - P.transpose(0, 2, 1)
    dP = rng.normal(size=(points, dim, dim, dim))
    return P, dP - dP.transpose(0, 1, 3, 2)


def loop_bracket(P, dP):
    # cyclic sum over (i, j, k) of pi^{li} d_l pi^{jk}, written out index by index
    N, n = P.shape[:2]
    out = np.zeros((N, n, n, n))
    for p in range(N):
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    s = 0.0
                    for l in range(n):
                        s += (P[p, l, i] * dP[p, l, j, k] + P[p, l, j] * dP[p, l, k, i]
                              + P[p, l, k] * dP[p, l, i, j])
                    out[p, i, j, k] = 2.0 * s
    return out


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_numpy_matches_loops(dim):
    P, dP = random_input(6, dim, dim)
    assert np.allclose(_kernels_py.schouten_self(P, dP), loop_bracket(P, dP), rtol=0, atol=1e-12)


def test_linear_so3_is_zero():
    x, y, z = 0.3, -1.1, 0.7
    P = np.array([[[0, z, -y], [-z, 0, x], [y, -x, 0]]], dtype=float)
    dP = np.zeros((1, 3, 3, 3))
    for l, (i, j) in enumerate([(1, 2), (2, 0), (0, 1)]):
        dP[0, l, i, j], dP[0, l, j, i] = 1.0, -1.0
    assert np.all(kernels.schouten_self(P, dP) == 0.0)


def test_result_is_totally_antisymmetric():
    R = kernels.schouten_self(*random_input(4, 4, 1))
    assert np.allclose(R, -R.transpose(0, 2, 1, 3))
    assert np.allclose(R, -R.transpose(0, 1, 3, 2))


@needs_ext
@given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_compiled_matches_numpy(points, dim, seed):
    P, dP = random_input(points, dim, seed)
    a = _kernels.schouten_self(np.ascontiguousarray(P), np.ascontiguousarray(dP))
    b = _kernels_py.schouten_self(P, dP)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    assert np.allclose(_kernels.schouten_self_max(np.ascontiguousarray(P), np.ascontiguousarray(dP)),
                       _kernels_py.schouten_self_max(P, dP), rtol=1e-13, atol=1e-13)


def test_empty_input():
    assert kernels.schouten_self_max(np.zeros((0, 3, 3)), np.zeros((0, 3, 3, 3))).shape == (0,)


def test_backend_selection():
    pure = os.environ.get("COMPACTPOISSON_PURE", "") in ("1", "true", "yes")
    expected = "cython" if _kernels is not None and not pure else "python"
    assert kernels.BACKEND == expected


def test_pure_env_forces_fallback():
    env = dict(os.environ, COMPACTPOISSON_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from compactpoisson import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
