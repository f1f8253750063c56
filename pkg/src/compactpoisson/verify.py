"""Grid and symbolic certification of bivector fields."""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import config
from . import exterior as ex
from . import kernels
from . import symexpr as se
from .exterior import MultivectorField

__all__ = [
    "GridSpec", "VerificationReport", "jacobi_residual", "rank_map", "RankMap",
    "support_check", "germ_compare", "flat_profile", "evaluate_with_derivatives",
    "ranks_of", "reports_to_json", "reports_table",
]


# ---------------------------------------------------------------------------
# sampling

@dataclass(frozen=True)
class GridSpec:
    """Sample points in a region.

    ``region`` kinds: ``box`` (``bounds``), ``ball`` (``radius``, optional
    ``center``), ``annulus`` (``r1``, ``r2``), ``collar`` (``bounds`` for the
    boundary axes then ``t`` range, collar axis last by position ``t_index``).
    ``mode`` is ``lattice`` (``n`` per axis) or ``random`` (``count`` points).
    """

    region: dict
    n: int = 10
    count: int = 1000
    mode: str = "random"
    seed: int = config.DEFAULT_SEED

    def points(self, dim: int) -> np.ndarray:
        reg = self.region
        kind = reg["kind"]
        rng = np.random.default_rng(self.seed)
        if kind in ("box", "collar"):
            bounds = [tuple(map(float, b)) for b in reg["bounds"]]
            if len(bounds) != dim:
                raise ValueError("box bounds do not match the dimension")
            if self.mode == "lattice":
                axes = [np.linspace(a, b, self.n) for a, b in bounds]
                return np.array(list(itertools.product(*axes)), dtype=float)
            lo = np.array([a for a, _ in bounds])
            hi = np.array([b for _, b in bounds])
            return lo + (hi - lo) * rng.random((self.count, dim))
        if kind in ("ball", "annulus"):
            center = np.asarray(reg.get("center", np.zeros(dim)), dtype=float)
            r_in = float(reg.get("r1", 0.0))
            r_out = float(reg.get("radius", reg.get("r2", 1.0)))
            if self.mode == "lattice":
                axes = [np.linspace(-r_out, r_out, self.n)] * dim
                pts = np.array(list(itertools.product(*axes)), dtype=float)
                rr = np.linalg.norm(pts, axis=1)
                return center + pts[(rr <= r_out) & (rr >= r_in)]
            d = rng.normal(size=(self.count, dim))
            d /= np.linalg.norm(d, axis=1)[:, None]
            u = rng.random(self.count)
            rad = (r_in ** dim + u * (r_out ** dim - r_in ** dim)) ** (1.0 / dim)
            return center + d * rad[:, None]
        raise ValueError(f"unknown grid region kind {kind!r}")

    def to_json(self):
        return {"region": _jsonable(self.region), "n": self.n, "count": self.count,
                "mode": self.mode, "seed": self.seed}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, se.Fraction)):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _points(grid, dim):
    if isinstance(grid, GridSpec):
        return grid.points(dim)
    return np.atleast_2d(np.asarray(grid, dtype=float))


# ---------------------------------------------------------------------------
# reports

@dataclass
class VerificationReport:
    name: str
    passed: bool
    worst: float = 0.0
    witness: list | None = None
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and self.witness is None:
            self.witness = []

    def to_json(self):
        # runtime is deliberately left out so reports are reproducible byte for byte
        return {"check": self.name, "pass": bool(self.passed), "worst": _fmt(self.worst),
                "witness": None if self.witness is None else [_fmt(x) for x in self.witness],
                "details": _jsonable(self.details)}

    def __bool__(self):
        return bool(self.passed)


def _fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(f"{x:.12g}")


def reports_to_json(reports) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True)


def reports_table(reports) -> str:
    rows = [("check", "result", "worst", "witness", "time[s]")]
    for r in reports:
        w = "" if not r.witness else "(" + ", ".join(f"{x:.4g}" for x in r.witness) + ")"
        rows.append((r.name, "PASS" if r.passed else "FAIL", f"{r.worst:.3g}", w, f"{r.runtime:.2f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows)


def _pick_witness(points, values):
    """Point of the largest value; ties go to the largest coordinate sum."""
    vals = np.where(np.isnan(values), np.inf, values)
    m = vals.max()
    idx = np.flatnonzero(vals == m)
    best = idx[np.argmax(points[idx].sum(axis=1))]
    return points[best].tolist(), float(values[best])


# ---------------------------------------------------------------------------
# evaluation helpers

def evaluate_with_derivatives(pi: MultivectorField, points):
    """(P, dP): P[p, i, j] = pi^{ij}, dP[p, l, i, j] = d_l pi^{ij}."""
    pts = _points(points, pi.patch.dim)
    n = pi.patch.dim
    names = pi.patch.varnames
    env = {v: pts[:, i] for i, v in enumerate(names)}
    N = pts.shape[0]
    P = np.zeros((N, n, n))
    dP = np.zeros((N, n, n, n))
    with np.errstate(all="ignore"):
        for (i, j), c in pi.coeffs.items():
            v = se.evaluate(c, env)
            P[:, i, j], P[:, j, i] = v, -v
            for l, name in enumerate(names):
                dc = se.diff(c, name)
                if dc is se.ZERO:
                    continue
                dv = se.evaluate(dc, env)
                dP[:, l, i, j], dP[:, l, j, i] = dv, -dv
    return P, dP


def _all_polynomial(pi):
    names = pi.patch.varnames
    return all(se.to_poly(c, names) is not None for c in pi.coeffs.values())


def jacobi_residual(pi: MultivectorField, grid, tol=config.JACOBI_TOL, symbolic=None) -> VerificationReport:
    """Certify [pi, pi] = 0: exactly for polynomial coefficients, on the grid otherwise."""
    t0 = time.perf_counter()
    names = pi.patch.varnames
    pts = _points(grid, pi.patch.dim)
    use_sym = _all_polynomial(pi) if symbolic is None else symbolic
    details = {"points": int(pts.shape[0]), "backend": kernels.BACKEND}
    if use_sym:
        res = ex.schouten(pi, pi)
        failing = {}
        for k, c in res.coeffs.items():
            p = se.to_poly(c, names)
            if p:
                failing[k] = p
        details["path"] = "symbolic"
        if not failing:
            return VerificationReport("jacobi", True, 0.0, None, time.perf_counter() - t0, details)
        details["failing"] = {
            ",".join(str(i + 1) for i in k): str(se.from_poly(p, names)) for k, p in failing.items()}
        # witness: the grid point with the largest residual
        vals = np.zeros(pts.shape[0])
        env = {v: pts[:, i] for i, v in enumerate(names)}
        for k, p in failing.items():
            vals = np.maximum(vals, np.abs(se.evaluate(se.from_poly(p, names), env)))
        w, worst = _pick_witness(pts, vals)
        return VerificationReport("jacobi", False, worst, w, time.perf_counter() - t0, details)
    P, dP = evaluate_with_derivatives(pi, pts)
    vals = kernels.schouten_self_max(P, dP)
    details["path"] = "grid"
    w, worst = _pick_witness(pts, vals)
    passed = bool(np.all(vals <= tol))
    return VerificationReport("jacobi", passed, worst, None if passed else w, time.perf_counter() - t0, details)


# ---------------------------------------------------------------------------
# rank

def ranks_of(mats, rtol=config.RANK_RTOL) -> np.ndarray:
    """Rank of each antisymmetric matrix: singular values above rtol*(smax+1)."""
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-1] == 0:
        return np.zeros(mats.shape[0], dtype=int)
    s = np.linalg.svd(mats, compute_uv=False)
    thr = rtol * (s[:, :1] + 1.0)
    return (s > thr).sum(axis=1)


def _normalized_matrices(pi: MultivectorField, pts, prec=53):
    """Coefficient matrices divided by their largest entry.

    Flat factors drive entries far below the double range well inside the
    support; such points are evaluated in mpmath, whose exponent range is
    unbounded, before normalising.
    """
    n = pi.patch.dim
    N = pts.shape[0]
    names = pi.patch.varnames
    env = {v: pts[:, i] for i, v in enumerate(names)}
    keys = list(pi.coeffs)
    with np.errstate(all="ignore"):
        vals = np.stack([se.evaluate(pi.coeffs[k], env) for k in keys], axis=1) if keys else np.zeros((N, 0))
        zero = np.stack([se.structural_zero_mask(pi.coeffs[k], env) for k in keys], axis=1) if keys \
            else np.zeros((N, 0), dtype=bool)
    vals = np.where(zero, 0.0, vals)
    scale = np.abs(vals).max(axis=1) if keys else np.zeros(N)
    # entries that are nonzero but not representable, or badly scaled rows
    tiny = (np.abs(vals) < 1e-250) & ~zero
    redo = ~np.isfinite(vals).all(axis=1) | tiny.any(axis=1)
    mats = np.zeros((N, n, n))
    for p in range(N):
        row = vals[p]
        if redo[p]:
            pt = {v: mpmath.mpf(float(pts[p, i])) for i, v in enumerate(names)}
            with mpmath.workprec(prec):
                mp_row = [mpmath.mpf(0) if zero[p, c] else se.evaluate_mp(pi.coeffs[k], pt, prec)
                          for c, k in enumerate(keys)]
                m = max((abs(x) for x in mp_row), default=mpmath.mpf(0))
                row = np.array([float(x / m) if m != 0 else 0.0 for x in mp_row])
        elif scale[p] > 0:
            row = row / scale[p]
        for c, (i, j) in enumerate(keys):
            mats[p, i, j], mats[p, j, i] = row[c], -row[c]
    return mats


@dataclass
class RankMap:
    points: np.ndarray
    ranks: np.ndarray
    histogram: dict

    def to_json(self):
        return {"histogram": {str(k): int(v) for k, v in sorted(self.histogram.items())}}


def rank_map(pi: MultivectorField, grid, rtol=config.RANK_RTOL) -> RankMap:
    pts = _points(grid, pi.patch.dim)
    mats = _normalized_matrices(pi, pts)
    r = ranks_of(mats, rtol)
    vals, counts = np.unique(r, return_counts=True)
    return RankMap(pts, r, {int(v): int(c) for v, c in zip(vals, counts)})


# ---------------------------------------------------------------------------
# support and germs

def support_check(pi: MultivectorField, outside_points, name="support") -> VerificationReport:
    """Every component must select an identically-zero branch at each point."""
    t0 = time.perf_counter()
    pts = _points(outside_points, pi.patch.dim)
    env = {v: pts[:, i] for i, v in enumerate(pi.patch.varnames)}
    ok = np.ones(pts.shape[0], dtype=bool)
    for c in pi.coeffs.values():
        ok &= se.structural_zero_mask(c, env)
    details = {"points": int(pts.shape[0])}
    if ok.all():
        return VerificationReport(name, True, 0.0, None, time.perf_counter() - t0, details)
    bad = int(np.flatnonzero(~ok)[0])
    details["nonzero_points"] = int((~ok).sum())
    return VerificationReport(name, False, 1.0, pts[bad].tolist(), time.perf_counter() - t0, details)


def germ_compare(pi1: MultivectorField, pi2: MultivectorField, region: dict, order: int = 0,
                 grid=None, tol=config.GERM_TOL) -> VerificationReport:
    """Agreement of two bivectors on ``region`` (an open ball or box).

    First tries branch-level identity: both sides are resolved on the region
    and compared as expressions.  Otherwise values and partial derivatives up
    to ``order`` are compared at the grid points.
    """
    t0 = time.perf_counter()
    if pi1.patch.varnames != pi2.patch.varnames:
        raise ex.ExteriorError("patch mismatch")
    names = pi1.patch.varnames
    n = len(names)
    kind = region["kind"]
    center = [se.Fraction(str(c)) for c in region.get("center", [0] * n)]
    shift = {v: se.add(se.var(v), c) for v, c in zip(names, center) if c != 0}
    if kind == "ball":
        rad = float(region["radius"])
        box = {v: (-rad, rad) for v in names}
        ball = (names, rad)
    else:
        box = {v: tuple(map(float, b)) for v, b in zip(names, region["bounds"])}
        ball = None
    keys = sorted(set(pi1.coeffs) | set(pi2.coeffs))
    symbolic_ok = True
    for k in keys:
        a, b = pi1[k], pi2[k]
        if shift:
            a, b = se.subs(a, shift), se.subs(b, shift)
        ra = se.resolve(a, box, ball, open_region=True)
        rb = se.resolve(b, box, ball, open_region=True)
        if ra is rb:
            continue
        d = se.sub(ra, rb)
        if se.is_zero(d):
            continue
        symbolic_ok = False
        break
    if symbolic_ok:
        return VerificationReport("germ", True, 0.0, None, time.perf_counter() - t0, {"path": "symbolic"})
    if grid is None:
        grid = GridSpec(dict(region, kind="ball" if kind == "ball" else "box"), count=200)
    pts = _points(grid, n)
    env = {v: pts[:, i] for i, v in enumerate(names)}
    worst = np.zeros(pts.shape[0])
    for k in keys:
        level = [(pi1[k], pi2[k])]
        exprs = list(level)
        for _ in range(order):
            level = [(se.diff(a, v), se.diff(b, v)) for a, b in level for v in names]
            exprs.extend(level)
        for a, b in exprs:
            with np.errstate(all="ignore"):
                diff = np.abs(se.evaluate(a, env) - se.evaluate(b, env))
            worst = np.maximum(worst, np.where(np.isnan(diff), np.inf, diff))
    w, wv = _pick_witness(pts, worst)
    passed = bool(np.all(worst <= tol))
    return VerificationReport("germ", passed, wv, None if passed else w, time.perf_counter() - t0,
                              {"path": "grid", "order": order})


def flat_profile(pi: MultivectorField, directions, radius=1.0, center=None, kmax=5,
                 name="flatness") -> VerificationReport:
    """est_flat_order of every component across the sphere |x - center| = radius
    along the given unit directions; passes when all orders reach ``kmax``."""
    t0 = time.perf_counter()
    names = pi.patch.varnames
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    c0 = np.zeros(len(names)) if center is None else np.asarray(center, dtype=float)
    worst = kmax
    witness = None
    for d in dirs:
        for c in pi.coeffs.values():
            def fn(s, c=c, d=d):
                s = np.asarray(s, dtype=float)
                pts = c0[None, :] + s[:, None] * d[None, :]
                with np.errstate(all="ignore"):
                    return se.evaluate(c, {v: pts[:, i] for i, v in enumerate(names)})
            order = se.flat_order_report(fn, float(radius), kmax).order
            if order < worst:
                worst, witness = order, (c0 + radius * d).tolist()
    passed = worst >= kmax
    return VerificationReport(name, passed, float(worst), witness if not passed else None,
                              time.perf_counter() - t0, {"kmax": kmax, "rays": int(dirs.shape[0])})


def random_directions(n, count, seed=config.DEFAULT_SEED):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, n))
    return d / np.linalg.norm(d, axis=1)[:, None]
