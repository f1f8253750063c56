"""Numerical thresholds shared by every verification routine."""

from __future__ import annotations

# flat-order estimation
TAU_FLAT = 1e-7
FLAT_STEPS = (1e-2, 10 ** -2.5, 1e-3)
FLAT_KMAX = 8

# rank of a bivector: singular values below RANK_RTOL * (sigma_max + 1) count as zero
RANK_RTOL = 1e-8

JACOBI_TOL = 1e-8
GERM_TOL = 1e-8
NONZERO_TOL = 1e-10
POSITIVITY_MARGIN = 1e-6
T_MAX = 10.0
TAMING_DIRECTIONS = 200

DEFAULT_SEED = 20240101
