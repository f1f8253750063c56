"""Explicit compactly supported Poisson structures with certificates.

The main entry points are re-exported here; the submodules hold the rest.
"""

__version__ = "0.1.0"

from .constructors import (  # noqa: E402
    ball_support, collar_extend, constant_rank, first_jet_extension, lie_linear, product, seeds,
)
from .kernels import BACKEND  # noqa: E402
from .patchwork import assemble_patchwork, simplex_ball_map  # noqa: E402
from .boundary import BoundaryData, pfaffian_class, poisson_extension  # noqa: E402
from .taper import make_bump, make_taper  # noqa: E402
from .verify import GridSpec, jacobi_residual, rank_map  # noqa: E402

__all__ = [
    "__version__", "BACKEND", "ball_support", "collar_extend", "constant_rank", "first_jet_extension",
    "lie_linear", "product", "seeds", "assemble_patchwork", "simplex_ball_map", "BoundaryData",
    "pfaffian_class", "poisson_extension", "make_bump", "make_taper", "GridSpec", "jacobi_residual",
    "rank_map",
]
