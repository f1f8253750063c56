"""Pure numpy versions of the hot numerical kernels."""

import numpy as np


def schouten_self(P, dP):
    """[pi, pi]^{ijk} at every point.

    P has shape (N, n, n) with P[p, i, j] = pi^{ij}; dP has shape (N, n, n, n)
    with dP[p, l, i, j] = d_l pi^{ij}.  Returns shape (N, n, n, n).
    """
    P = np.asarray(P, dtype=float)
    dP = np.asarray(dP, dtype=float)
    T = np.einsum("pli,pljk->pijk", P, dP)
    return 2.0 * (T + T.transpose(0, 2, 3, 1) + T.transpose(0, 3, 1, 2))


def schouten_self_max(P, dP):
    """Per-point max |[pi, pi]^{ijk}|, shape (N,)."""
    R = schouten_self(P, dP)
    if R.size == 0:
        return np.zeros(R.shape[0])
    return np.abs(R).reshape(R.shape[0], -1).max(axis=1)
