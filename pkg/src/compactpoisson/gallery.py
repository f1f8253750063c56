"""Named, reproducible examples with their expected certificate summaries.

Each entry builds a structure from a fixed configuration, runs the relevant
checks and reduces them to a small summary.  Runtimes never enter the
summaries, so two runs with the same seed serialise to identical bytes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import boundary as bd_mod
from . import config
from . import constructors as cons
from . import patchwork as pw_mod
from . import symexpr as se
from . import verify
from .exterior import MultivectorField
from .symexpr import PatchSpec
from .taper import make_bump, make_taper

__all__ = ["GalleryConfig", "GalleryEntry", "entries", "run_entry", "run_gallery", "gallery_json",
           "collar_example", "first_jet_example", "product_example", "ball_checks",
           "non_poisson_fixture", "zero_bivector"]


@dataclass(frozen=True)
class GalleryConfig:
    seed: int = config.DEFAULT_SEED
    jacobi_points: int = 10_000
    collar_points: int = 20_000
    support_points: int = 2_000
    rays: int = 20
    delta: float = 0.1


@dataclass
class GalleryEntry:
    name: str
    builder: Callable  # GalleryConfig -> (summary dict, reports)
    expected: dict
    description: str = ""

    def matches(self, summary: dict) -> bool:
        return all(summary.get(k) == v for k, v in self.expected.items())


# ---------------------------------------------------------------------------
# shared checks

def _outside_ball(n, r1, r2, count, seed):
    return verify.GridSpec({"kind": "annulus", "r1": r1, "r2": r2}, count=count, seed=seed).points(n)


def ball_checks(bs: cons.BallSupported, cfg: GalleryConfig, center=None):
    """Germ on B_1/2, structural zero off B_1, Jacobi on B_1.2 and flatness on |x| = 1."""
    fld = bs.field
    n = fld.patch.dim
    c = np.zeros(n) if center is None else np.asarray([float(x) for x in center])
    region = {"kind": "ball", "radius": 0.5}
    if center is not None:
        region["center"] = [str(x) for x in center]
    germ = verify.germ_compare(fld, bs.source.pi if center is None else _source_field(bs), region)
    outside = c + _outside_ball(n, 1.0, 1.5, cfg.support_points, cfg.seed + 1)
    sup = verify.support_check(fld, outside)
    jac = verify.jacobi_residual(fld, verify.GridSpec(
        {"kind": "ball", "radius": 1.2, "center": c.tolist()}, count=cfg.jacobi_points, seed=cfg.seed))
    rays = verify.random_directions(n, cfg.rays, cfg.seed + 2)
    flat = verify.flat_profile(fld, rays, radius=1.0, center=c, kmax=5)
    return [germ, sup, jac, flat]


def _source_field(bs):
    return bs.meta["source_field"]


def _summary(reports, **extra):
    out = {r.name: bool(r.passed) for r in reports}
    out.update(extra)
    out["pass"] = all(r.passed for r in reports)
    return out


def _ball_entry(seed_name):
    def build(cfg):
        bs = cons.ball_support(cons.seeds()[seed_name], make_taper("single", cfg.delta))
        reps = ball_checks(bs, cfg)
        return _summary(reps, t_end=bs.t_end), reps
    return build


# ---------------------------------------------------------------------------
# constant rank: rank map inside the ball

def _constant_rank_entry(n, r):
    def build(cfg):
        bs = cons.ball_support(cons.constant_rank(n, r), make_taper("single", cfg.delta))
        reps = ball_checks(bs, cfg)
        inner = verify.rank_map(bs.field, verify.GridSpec({"kind": "ball", "radius": 0.9}, count=400,
                                                          seed=cfg.seed + 3))
        outer = verify.rank_map(bs.field, _outside_ball(n, 1.0, 1.5, 200, cfg.seed + 4))
        return _summary(reps, inner_ranks=sorted(inner.histogram), outer_ranks=sorted(outer.histogram)), reps
    return build


# ---------------------------------------------------------------------------
# products

def product_example(delta=0.1):
    taper = make_taper("single", delta)
    a = cons.ball_support(cons.constant_rank(2, 1, ["x1", "x2"]), taper)
    b = cons.ball_support(cons.lie_linear(cons.so3(), ["y1", "y2", "y3"]), taper)
    return a, b, cons.product(a.field, b.field)


def _product_build(cfg):
    a, b, res = product_example(cfg.delta)
    fld = res.field
    n1, n2 = a.field.patch.dim, b.field.patch.dim
    # pi1 + pi2 on the product patch
    shifted = {(i + n1, j + n1): c for (i, j), c in b.field.coeffs.items()}
    plain = MultivectorField(fld.patch, 2, {**a.field.coeffs, **shifted})
    box = [(float(lo), float(hi)) for lo, hi in res.support_boxes[0] + res.support_boxes[1]]
    ident = verify.germ_compare(fld, plain, {"kind": "box", "bounds": box})
    ident.name = "sum_on_supports"
    if ident.details.get("path") != "symbolic":
        ident.passed = False
    # outside U1 x U2: at least one factor's coordinates leave its enclosure
    enc = [(float(lo), float(hi)) for lo, hi in res.enclosures[0] + res.enclosures[1]]
    rng = np.random.default_rng(cfg.seed + 5)
    pts = rng.uniform(-3.0, 3.0, size=(4 * cfg.support_points, n1 + n2))
    lo = np.array([e[0] for e in enc])
    hi = np.array([e[1] for e in enc])
    inside = (pts > lo) & (pts < hi)
    off = ~inside[:, :n1].all(axis=1) | ~inside[:, n1:].all(axis=1)
    sup = verify.support_check(fld, pts[off][: cfg.support_points])
    big = [(1.2 * x, 1.2 * y) for x, y in enc]
    jac = verify.jacobi_residual(fld, verify.GridSpec({"kind": "box", "bounds": big}, count=cfg.jacobi_points,
                                                      seed=cfg.seed))
    reps = [ident, sup, jac]
    return _summary(reps, dims=[n1, n2]), reps


# ---------------------------------------------------------------------------
# collar extension

def collar_example():
    """exp(-t) d_t ^ d_x + d_x ^ d_y on R^2 x [0, oo)."""
    patch = PatchSpec(["x", "y", "t"], {"kind": "collar", "bounds": [(-1.0, 1.0), (-1.0, 1.0)], "t0": -0.1},
                      collar_var="t")
    V = MultivectorField(patch, 1, {(0,): se.ONE})
    W = MultivectorField(patch, 2, {(0, 1): se.ONE})
    return cons.CollarBivector(patch, [(-1, V, None), (0, None, W)])


def _collar_build(cfg):
    cb = collar_example()
    taper = make_taper("single", cfg.delta)
    fld = cons.collar_extend(cb, taper, make_bump(1, 2, "t"))
    box = {"kind": "box", "bounds": [(-1.0, 1.0), (-1.0, 1.0), (-0.1, 3.0)]}
    jac = verify.jacobi_residual(fld, verify.GridSpec(box, count=cfg.jacobi_points, seed=cfg.seed))
    germ = verify.germ_compare(fld, cb.assembled(),
                               {"kind": "box", "bounds": [(-1.0, 1.0), (-1.0, 1.0), (-0.1, cfg.delta)]})
    far = verify.GridSpec({"kind": "box", "bounds": [(-1.0, 1.0), (-1.0, 1.0), (2.0, 5.0)]},
                          count=cfg.support_points, seed=cfg.seed + 6).points(3)
    sup = verify.support_check(fld, far)
    ranks = verify.rank_map(fld, verify.GridSpec({"kind": "box", "bounds": [(-1, 1), (-1, 1), (0.0, 0.99)]},
                                                 count=200, seed=cfg.seed + 7))
    reps = [germ, sup, jac]
    return _summary(reps, ranks_before_one=sorted(ranks.histogram)), reps


# ---------------------------------------------------------------------------
# first jets

def first_jet_example():
    """exp(x + y) d_x ^ d_y, whose first jet at the origin is (1 + x + y) d_x ^ d_y."""
    patch = PatchSpec(["x", "y"])
    x, y = patch.vars()
    return MultivectorField(patch, 2, {(0, 1): se.exp(se.add(x, y))})


def _first_jet_build(cfg):
    pi = first_jet_example()
    center = (Fraction(1, 10), Fraction(-1, 5))
    bs = cons.first_jet_extension(pi, center, make_taper("single", cfg.delta))
    pt = {"x": np.array([0.1]), "y": np.array([-0.2])}
    diffs = []
    for c_new, c_old in ((bs.field[0, 1], pi[0, 1]),):
        diffs.append(abs(se.evaluate(c_new, pt)[0] - se.evaluate(c_old, pt)[0]))
        for v in ("x", "y"):
            diffs.append(abs(se.evaluate(se.diff(c_new, v), pt)[0] - se.evaluate(se.diff(c_old, v), pt)[0]))
    jet = verify.VerificationReport("first_jet", max(diffs) <= 1e-12, max(diffs),
                                    None if max(diffs) <= 1e-12 else [0.1, -0.2])
    bs.meta["source_field"] = bs.source.pi.subs(
        {v: se.sub(se.var(v), c) for v, c in zip(["x", "y"], center)})
    reps = [jet] + ball_checks(bs, cfg, center=center)
    return _summary(reps), reps


# ---------------------------------------------------------------------------
# patchworks

def _patchwork_build(cfg):
    tri = pw_mod.two_triangle_square((1, 0))
    pw = pw_mod.assemble_patchwork(tri, seed=cfg.seed)
    rep = pw.report
    lattice = verify.rank_map(pw.field, verify.GridSpec(
        {"kind": "box", "bounds": [(0.0, 1.0), (0.0, 1.0)]}, n=60, mode="lattice"))
    phi = pw_mod.simplex_ball_map(2)
    x, y = phi.source.vars()
    printed = se.mul(2, se.mul(se.sqrt(se.div(se.add(1, y), se.sub(1, y))), x))
    # expressions are interned, so identity is structural equality
    phi_ok = phi.components[0] is printed and phi.components[1] is y
    reps = [verify.VerificationReport("conformance", bool(rep["pass"]), 0.0, None if rep["pass"] else []),
            verify.VerificationReport("phi2_formula", phi_ok, 0.0, None if phi_ok else [])]
    return _summary(reps, lattice_ranks={str(k): v for k, v in sorted(lattice.histogram.items())},
                    simplex_ranks=[sorted(int(r) for r in s["ranks"]) for s in rep["simplices"]]), reps


# ---------------------------------------------------------------------------
# boundary extensions

def _extension_entry(model):
    def build(cfg):
        bd = model()
        res = bd_mod.poisson_extension(bd, make_taper("double", cfg.delta), samples=cfg.collar_points,
                                       seed=cfg.seed)
        cert = res.certificate
        reps = [verify.VerificationReport(name, st["pass"], 0.0 if st["worst"] in ("nan",) else st["worst"],
                                          st["witness"]) for name, st in sorted(cert["stages"].items())]
        pc = res.pseudoconvex
        reps.append(verify.VerificationReport("pseudoconvex", pc.passed, 0.0, None if pc.passed else []))
        return _summary(reps, k=cert["k"], rank_profile=cert["rank_profile"]), reps
    return build


# ---------------------------------------------------------------------------
# the gallery

def entries() -> list[GalleryEntry]:
    ball_ok = {"germ": True, "support": True, "jacobi": True, "flatness": True, "pass": True}
    out = [
        GalleryEntry("ball-constant-r2", _ball_entry("constant-r2"), dict(ball_ok, t_end=1),
                     "constant symplectic structure on the plane, vanishing outside the unit disc"),
        GalleryEntry("ball-rank2-r4", _ball_entry("rank2-r4"), dict(ball_ok, t_end=1),
                     "constant rank-2 structure on R^4 supported in the unit ball"),
        GalleryEntry("ball-so3", _ball_entry("so3"), dict(ball_ok, t_end=1),
                     "linear Poisson structure of so(3) supported in the unit ball"),
        GalleryEntry("ball-heisenberg", _ball_entry("heisenberg"), dict(ball_ok, t_end=1),
                     "linear Poisson structure of the Heisenberg algebra supported in the unit ball"),
        GalleryEntry("ball-affine", _ball_entry("affine"), dict(ball_ok, t_end=1),
                     "affine structure (y + 1) d_x ^ d_y supported in the unit disc"),
        GalleryEntry("ball-quadratic", _ball_entry("quadratic"), dict(ball_ok, t_end=2),
                     "quadratic structure with a Casimir cut-off, supported in the unit ball"),
        GalleryEntry("constant-rank-4", _constant_rank_entry(4, 2),
                     dict(ball_ok, inner_ranks=[4], outer_ranks=[0]),
                     "symplectic R^4 of full rank on |x| <= 0.9 and zero outside the unit ball"),
        GalleryEntry("product-r2-r3", _product_build,
                     {"sum_on_supports": True, "support": True, "jacobi": True, "pass": True, "dims": [2, 3]},
                     "product of a plane and an so(3) ball structure"),
        GalleryEntry("collar-extension", _collar_build,
                     {"germ": True, "support": True, "jacobi": True, "pass": True, "ranks_before_one": [2]},
                     "collar structure exp(-t) d_t ^ d_x + d_x ^ d_y cut off past t = 2"),
        GalleryEntry("first-jet", _first_jet_build,
                     {"first_jet": True, "jacobi": True, "support": True, "flatness": True, "pass": True},
                     "compactly supported structure with the first jet of exp(x + y) d_x ^ d_y"),
        GalleryEntry("patchwork-square", _patchwork_build,
                     {"conformance": True, "phi2_formula": True, "pass": True,
                      "lattice_ranks": {"0": 1947, "2": 1653}, "simplex_ranks": [[2], [0]]},
                     "two triangles of a square with ranks 2 and 0"),
        GalleryEntry("extension-contact-ball", _extension_entry(bd_mod.contact_ball_model),
                     {"pass": True, "k": 1, "rank_profile": {"t<1": [4], "1<=t<2": [0], "t>=2": [0]}},
                     "contact boundary of the 4-ball, structure of full rank inside the collar"),
        GalleryEntry("extension-cosymplectic", _extension_entry(bd_mod.cosymplectic_model),
                     {"pass": True, "k": 0, "rank_profile": {"t<1": [4], "1<=t<2": [2], "t>=2": [0]}},
                     "cosymplectic boundary of a torus collar with leaves of rank 2 on [1, 2)"),
    ]
    return out


def run_entry(entry: GalleryEntry, cfg: GalleryConfig = GalleryConfig()) -> dict:
    t0 = time.perf_counter()
    summary, reports = entry.builder(cfg)
    summary = verify._jsonable(summary)
    return {"name": entry.name, "description": entry.description, "expected": verify._jsonable(entry.expected),
            "observed": summary, "pass": bool(entry.matches(summary)),
            "reports": [r.to_json() for r in reports], "runtime": time.perf_counter() - t0}


def run_gallery(cfg: GalleryConfig = GalleryConfig(), names=None) -> dict:
    chosen = [e for e in entries() if names is None or e.name in names]
    if names is not None:
        unknown = set(names) - {e.name for e in chosen}
        if unknown:
            raise KeyError(f"unknown gallery entries: {sorted(unknown)}")
    results = [run_entry(e, cfg) for e in chosen]
    return {"seed": cfg.seed, "config": verify._jsonable(cfg.__dict__), "entries": results,
            "pass": all(r["pass"] for r in results)}


def gallery_json(report: dict) -> str:
    """Byte-stable serialisation: runtimes dropped, keys sorted."""
    clean = dict(report, entries=[{k: v for k, v in e.items() if k != "runtime"} for e in report["entries"]])
    return json.dumps(clean, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# fixtures

def non_poisson_fixture() -> MultivectorField:
    """z d_y^d_z + x d_z^d_x + y d_x^d_y; [pi, pi] is a multiple of x + y + z."""
    patch = PatchSpec(["x", "y", "z"])
    x, y, z = patch.vars()
    return MultivectorField(patch, 2, {(1, 2): z, (2, 0): x, (0, 1): y})


def zero_bivector(n=2) -> MultivectorField:
    return MultivectorField(PatchSpec(["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)]), 2, {})
