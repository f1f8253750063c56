"""Time the Schouten self-bracket kernel: compiled extension against numpy.

    python3 benchmarks/bench_kernels.py [--points N] [--dim n] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from compactpoisson import _kernels_py
from compactpoisson.verify import evaluate_with_derivatives
from compactpoisson import constructors as cons
from compactpoisson.taper import make_taper

try:
    from compactpoisson import _kernels
except ImportError:  # extension not built
    _kernels = None


def random_input(points, dim, seed=0):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(points, dim, dim))
    P = P - P.transpose(0, 2, 1)
    dP = rng.normal(size=(points, dim, dim, dim))
    dP = dP - dP.transpose(0, 1, 3, 2)
    return np.ascontiguousarray(P), np.ascontiguousarray(dP)


def ball_input(points, seed=0):
    """Values and derivatives of a ball-supported so(3) structure."""
    bs = cons.ball_support(cons.seeds()["so3"], make_taper("single"))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.2, 1.2, size=(points, 3))
    return evaluate_with_derivatives(bs.field, pts)


def bench(name, P, dP, repeat):
    impls = [("numpy", _kernels_py)] + ([("cython", _kernels)] if _kernels is not None else [])
    ref = _kernels_py.schouten_self_max(P, dP)
    times = {}
    for label, mod in impls:
        out = mod.schouten_self_max(P, dP)
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-12), f"{label} disagrees with numpy"
        t = min(timeit.repeat(lambda: mod.schouten_self_max(P, dP), number=1, repeat=repeat))
        times[label] = t
        print(f"{name:18s} {label:7s} {P.shape[0]:8d} pts  {t * 1e3:9.2f} ms")
    if "cython" in times:
        print(f"{name:18s} speedup {times['numpy'] / times['cython']:.1f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=20_000)
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench(f"random dim {args.dim}", *random_input(args.points, args.dim), args.repeat)
    bench("ball so(3)", *ball_input(args.points), args.repeat)


if __name__ == "__main__":
    main()
