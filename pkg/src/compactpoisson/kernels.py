"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``COMPACTPOISSON_PURE=1`` to force the numpy versions.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("COMPACTPOISSON_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py


def schouten_self(P, dP):
    return _impl.schouten_self(np.ascontiguousarray(P, dtype=float), np.ascontiguousarray(dP, dtype=float))


def schouten_self_max(P, dP):
    return _impl.schouten_self_max(np.ascontiguousarray(P, dtype=float), np.ascontiguousarray(dP, dtype=float))
