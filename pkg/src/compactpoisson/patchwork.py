"""Simplex-to-ball maps and patchworks of regular Poisson structures.

The standard n-simplex is realised as a pyramid in R^n: the 1-simplex is
[-1, 1] and the (n+1)-simplex is the set of points ((1-t)/2 x, t) with x in
the n-simplex and -1 <= t <= 1.  The map phi_n from the open pyramid onto
the open unit ball is defined by the same induction,

    phi_{n+1}((1-t)/2 x, t) = (sqrt(1-t^2) phi_n(x), t),

and sends the boundary of the pyramid to the unit sphere.  Pulling back a
ball-supported structure along phi_n gives a Poisson structure on the open
simplex that is flat at its faces, so structures on the simplices of a
triangulation glue to a smooth one.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import config
from . import exterior as ex
from . import symexpr as se
from . import verify
from .constructors import ConstructionError, PolyPoisson, ball_support, constant_rank
from .exterior import ExplicitMap, MultivectorField
from .symexpr import PatchSpec
from .taper import CasimirBump, FlatTaper, make_taper

__all__ = [
    "PatchworkError", "PointLocationError", "SimplexChart", "simplex_ball_map", "pyramid_vertices",
    "simplex_poisson", "face_flatness", "TriangulationData", "Patchwork", "assemble_patchwork", "two_triangle_square",
]


class PatchworkError(ValueError):
    pass


class PointLocationError(PatchworkError):
    pass


def _names(n):
    return ["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)]


# ---------------------------------------------------------------------------
# the pyramid simplex and phi_n

def pyramid_vertices(n: int) -> list[tuple[Fraction, ...]]:
    """Vertices of the standard pyramid simplex; base vertices first, apex last."""
    if n < 1:
        raise PatchworkError("simplex dimension must be at least 1")
    verts = [(Fraction(-1),), (Fraction(1),)]
    for _ in range(1, n):
        verts = [v + (Fraction(-1),) for v in verts] + [(Fraction(0),) * len(verts[0]) + (Fraction(1),)]
    return verts


def _phi_components(n, xs):
    if n == 1:
        return [xs[0]]
    if n == 2:
        x, y = xs
        return [se.mul(2, se.sqrt(se.div(se.add(1, y), se.sub(1, y))), x), y]
    t = xs[-1]
    scale = se.div(2, se.sub(1, t))
    inner = _phi_components(n - 1, [se.mul(scale, v) for v in xs[:-1]])
    root = se.sqrt(se.sub(1, se.power(t, 2)))
    return [se.mul(root, c) for c in inner] + [t]


def simplex_ball_map(n: int, varnames=None) -> ExplicitMap:
    """phi_n: pyramid simplex -> unit ball, in closed form."""
    if n < 1:
        raise PatchworkError("simplex dimension must be at least 1")
    names = list(varnames or _names(n))
    src = PatchSpec(names, {"kind": "simplex"})
    dst = PatchSpec(names, {"kind": "ball", "radius": 1})
    return ExplicitMap(src, dst, _phi_components(n, [se.var(v) for v in names]))


def _solve(A, b):
    """Exact solve of a square rational system."""
    n = len(A)
    M = [list(map(Fraction, row)) + [Fraction(v)] for row, v in zip(A, b)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            raise PatchworkError("degenerate simplex")
        M[c], M[piv] = M[piv], M[c]
        for r in range(n):
            if r != c and M[r][c] != 0:
                q = M[r][c] / M[c][c]
                M[r] = [a - q * p for a, p in zip(M[r], M[c])]
    return [M[i][n] / M[i][i] for i in range(n)]


def _barycentric_affine(verts):
    """Rows (coefficients, offset) with b_k(x) = coefficients . x + offset."""
    n = len(verts) - 1
    v0 = verts[0]
    # columns of T are v_k - v_0; b_{1..n} = T^{-1}(x - v_0)
    T = [[verts[k + 1][i] - v0[i] for k in range(n)] for i in range(n)]
    inv_cols = [_solve(T, [Fraction(int(i == j)) for i in range(n)]) for j in range(n)]
    rows = []
    for k in range(n):
        coef = [inv_cols[j][k] for j in range(n)]
        off = -sum(c * v for c, v in zip(coef, v0))
        rows.append((coef, off))
    coef0 = [-sum(r[0][j] for r in rows) for j in range(n)]
    rows.insert(0, (coef0, 1 - sum(r[1] for r in rows)))
    return rows


def _affine_expr(coef, off, xs):
    return se.add(off, *[se.mul(c, x) for c, x in zip(coef, xs) if c != 0])


@dataclass
class SimplexChart:
    """Pyramid simplex of dimension n with its ball map and barycentrics."""

    n: int
    vertices: list
    phi: ExplicitMap
    barycentric: list  # (coefficients, offset) per vertex

    @classmethod
    def standard(cls, n: int, varnames=None) -> "SimplexChart":
        verts = pyramid_vertices(n)
        return cls(n, verts, simplex_ball_map(n, varnames), _barycentric_affine(verts))

    @property
    def patch(self) -> PatchSpec:
        return self.phi.source

    def bary_exprs(self):
        xs = self.patch.vars()
        return [_affine_expr(c, o, xs) for c, o in self.barycentric]

    def sample_interior(self, count, margin=0.0, seed=config.DEFAULT_SEED):
        return _sample_simplex(self.vertices, self.barycentric, count, margin, seed)

    def sample_boundary(self, count, seed=config.DEFAULT_SEED):
        return _sample_faces(self.vertices, count, seed)

    def boundary_radius_error(self, count=1000, seed=config.DEFAULT_SEED) -> float:
        """max | |phi(x)| - 1 | over exact rational points on the faces.

        Floating-point face points sit a rounding error off the face, where
        the root singularities of phi turn 1e-16 into 1e-8; rational points
        keep every radicand exactly zero or positive.
        """
        names = self.patch.varnames
        worst = 0.0
        for pt in _rational_face_points(self.vertices, count, seed):
            sub = dict(zip(names, (se.const(c) for c in pt)))
            img = [se.eval_point(se.subs(c, sub), {}) for c in self.phi.components]
            worst = max(worst, abs(float(np.linalg.norm(img)) - 1.0))
        return worst


def _bary_numeric(rows, pts):
    C = np.array([[float(c) for c in r[0]] for r in rows])
    o = np.array([float(r[1]) for r in rows])
    return pts @ C.T + o


def _sample_simplex(verts, rows, count, margin, seed):
    """Uniform samples whose distance to every face is at least ``margin``."""
    rng = np.random.default_rng(seed)
    V = np.array(verts, dtype=float)
    norms = np.array([np.linalg.norm([float(c) for c in r[0]]) for r in rows])
    out = []
    while sum(len(o) for o in out) < count:
        w = rng.dirichlet(np.ones(len(verts)), size=4 * count)
        pts = w @ V
        dist = _bary_numeric(rows, pts) / norms
        out.append(pts[(dist >= margin).all(axis=1)])
    return np.concatenate(out)[:count]


def _sample_faces(verts, count, seed):
    rng = np.random.default_rng(seed)
    V = np.array(verts, dtype=float)
    n1 = len(verts)
    face = rng.integers(0, n1, size=count)
    w = rng.dirichlet(np.ones(n1 - 1), size=count)
    pts = np.empty((count, V.shape[1]))
    for p in range(count):
        keep = [k for k in range(n1) if k != face[p]]
        pts[p] = w[p] @ V[keep]
    return pts


def _rational_face_points(verts, count, seed):
    rng = np.random.default_rng(seed)
    n1 = len(verts)
    out = []
    for _ in range(count):
        face = int(rng.integers(0, n1))
        keep = [verts[k] for k in range(n1) if k != face]
        w = [Fraction(int(a)) + 1 for a in rng.integers(0, 1000, size=len(keep))]
        tot = sum(w)
        out.append(tuple(sum(wi * v[i] for wi, v in zip(w, keep)) / tot for i in range(len(verts[0]))))
    return out


def _wrap_faces(c, bary):
    """c inside the open simplex, exact 0 on and beyond every face."""
    for b in reversed(bary):
        c = se.piecewise(se.neg(b), 0, c, se.ZERO)
    return c


def _raw_simplex_field(n, r, taper, bump, pi=None, varnames=None):
    chart = SimplexChart.standard(n, varnames)
    names = list(chart.patch.varnames)
    if pi is None:
        pi = constant_rank(n, r, names)
    elif list(pi.patch.varnames) != names:
        raise PatchworkError("override structure must use the simplex variables")
    if pi.pi.is_structurally_zero():
        return chart, MultivectorField(chart.patch, 2, {})
    bs = ball_support(pi, taper, bump)
    return chart, ex.pullback_bivector(chart.phi, bs.field)


def simplex_poisson(n: int, r: int, taper: FlatTaper | None = None, bump: CasimirBump | None = None,
                    varnames=None, pi: PolyPoisson | None = None) -> MultivectorField:
    """Pullback of the ball-supported rank-2r structure to the pyramid simplex.

    Components are wrapped in exact zero branches on the barycentric
    coordinates, so they vanish structurally on the faces and outside.
    """
    if 2 * r > n:
        raise ConstructionError(f"rank 2r={2 * r} exceeds dimension {n}")
    taper = taper or make_taper("single")
    chart, raw = _raw_simplex_field(n, r, taper, bump, pi, varnames)
    bary = chart.bary_exprs()
    return MultivectorField(chart.patch, 2, {k: _wrap_faces(c, bary) for k, c in raw.coeffs.items()})


# ---------------------------------------------------------------------------
# triangulations

@dataclass
class TriangulationData:
    vertices: list
    simplices: list
    ranks: list
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = [tuple(Fraction(str(c)) for c in v) for v in self.vertices]
        self.simplices = [tuple(int(i) for i in s) for s in self.simplices]
        self.ranks = [int(r) for r in self.ranks]
        if not self.vertices:
            raise PatchworkError("triangulation has no vertices")
        dims = {len(v) for v in self.vertices}
        if len(dims) != 1:
            raise PatchworkError("vertices have mixed dimensions")
        n = dims.pop()
        if len(self.ranks) != len(self.simplices):
            raise PatchworkError("one rank per simplex is required")
        for i, s in enumerate(self.simplices):
            if len(s) != n + 1:
                raise PatchworkError(f"simplex {i} needs {n + 1} vertices, has {len(s)}")
            if len(set(s)) != len(s) or min(s) < 0 or max(s) >= len(self.vertices):
                raise PatchworkError(f"simplex {i} has bad vertex indices {s}")
            if self.ranks[i] < 0 or 2 * self.ranks[i] > n:
                raise PatchworkError(f"simplex {i}: rank 2r={2 * self.ranks[i]} exceeds dimension {n}")
        self.n = n

    def simplex_vertices(self, i):
        return [self.vertices[k] for k in self.simplices[i]]

    def shared_faces(self):
        """(face vertex set, simplex a, simplex b) for codimension-one faces."""
        owners = {}
        for i, s in enumerate(self.simplices):
            for face in itertools.combinations(sorted(s), len(s) - 1):
                owners.setdefault(face, []).append(i)
        return [(f, o[0], o[1]) for f, o in sorted(owners.items()) if len(o) == 2]

    def all_faces(self):
        faces = set()
        for s in self.simplices:
            faces.update(itertools.combinations(sorted(s), len(s) - 1))
        return sorted(faces)

    def to_json(self):
        return {"vertices": [[float(c) for c in v] for v in self.vertices],
                "simplices": [list(s) for s in self.simplices], "ranks": list(self.ranks)}

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        for key in ("vertices", "simplices", "ranks"):
            if key not in d:
                raise PatchworkError(f"triangulation JSON lacks field {key!r}")
        return cls(d["vertices"], d["simplices"], d["ranks"])


def two_triangle_square(ranks=(1, 0)) -> TriangulationData:
    """[0,1]^2 cut along the diagonal y = x."""
    return TriangulationData([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)], list(ranks))


@dataclass
class Patchwork:
    tri: TriangulationData
    pieces: list  # per-simplex wrapped fields
    field: MultivectorField  # sum of the pieces
    taper: FlatTaper
    report: dict | None = None

    @property
    def patch(self):
        return self.field.patch

    def barycentric(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return [_bary_numeric(_barycentric_affine(self.tri.simplex_vertices(i)), pts)
                for i in range(len(self.tri.simplices))]

    def locate(self, points, eps=1e-12) -> np.ndarray:
        """Index of the containing simplex; lowest index on shared faces."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        where = np.full(pts.shape[0], -1)
        for i, b in enumerate(self.barycentric(pts)):
            inside = (b >= -eps).all(axis=1) & (where < 0)
            where[inside] = i
        if (where < 0).any():
            p = pts[int(np.argmax(where < 0))]
            raise PointLocationError(f"point {p.tolist()} lies in no simplex")
        return where

    def evaluate(self, points) -> np.ndarray:
        """Matrices pi^{ij} at each point from the containing simplex."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        where = self.locate(pts)
        n = self.tri.n
        out = np.zeros((pts.shape[0], n, n))
        for i, piece in enumerate(self.pieces):
            sel = where == i
            if sel.any():
                out[sel] = piece.dense(pts[sel])
        return out


def _chart_map(verts, std_verts, names):
    """Affine map from an embedded simplex onto the pyramid, vertex to vertex."""
    n = len(names)
    W = [[verts[k + 1][i] - verts[0][i] for k in range(n)] for i in range(n)]
    V = [[std_verts[k + 1][i] - std_verts[0][i] for k in range(n)] for i in range(n)]
    # A = V W^{-1}, solved row by row through W^T A^T = V^T
    Wt = [[W[j][i] for j in range(n)] for i in range(n)]
    A = [_solve(Wt, [V[i][k] for k in range(n)]) for i in range(n)]
    c = [std_verts[0][i] - sum(A[i][j] * verts[0][j] for j in range(n)) for i in range(n)]
    identity = all(A[i][j] == (i == j) for i in range(n) for j in range(n)) and not any(c)
    patch = PatchSpec(names)
    xs = patch.vars()
    comps = [_affine_expr(A[i], c[i], xs) for i in range(n)]
    return ExplicitMap(patch, PatchSpec(names, {"kind": "simplex"}), comps), identity


def _bounding_region(tri):
    lo = [float(min(v[i] for v in tri.vertices)) for i in range(tri.n)]
    hi = [float(max(v[i] for v in tri.vertices)) for i in range(tri.n)]
    return {"kind": "box", "bounds": [(a, b) for a, b in zip(lo, hi)]}


def assemble_patchwork(tri: TriangulationData, taper: FlatTaper | None = None,
                       bump: CasimirBump | None = None, varnames=None, certify=True,
                       samples=100, seed=config.DEFAULT_SEED) -> Patchwork:
    """Glue per-simplex structures; optionally attach a conformance report."""
    taper = taper or make_taper("single")
    n = tri.n
    names = list(varnames or _names(n))
    std = pyramid_vertices(n)
    patch = PatchSpec(names, _bounding_region(tri))
    pieces = []
    for i in range(len(tri.simplices)):
        _, raw = _raw_simplex_field(n, tri.ranks[i], taper, bump, tri.overrides.get(i), names)
        chart, identity = _chart_map(tri.simplex_vertices(i), std, names)
        moved = raw if identity else ex.pullback_bivector(chart, raw)
        bary = [_affine_expr(c, o, patch.vars()) for c, o in _barycentric_affine(tri.simplex_vertices(i))]
        pieces.append(MultivectorField(patch, 2, {k: _wrap_faces(c, bary) for k, c in moved.coeffs.items()}))
    total = {}
    for piece in pieces:
        for k, c in piece.coeffs.items():
            total[k] = se.add(total[k], c) if k in total else c
    pw = Patchwork(tri, pieces, MultivectorField(patch, 2, total), taper)
    if certify:
        pw.report = conformance(pw, samples=samples, seed=seed)
    return pw


# ---------------------------------------------------------------------------
# conformance

def _face_normal(tri, face, owner):
    """Unit normal of a face pointing into simplex ``owner``."""
    s = tri.simplices[owner]
    rows = _barycentric_affine(tri.simplex_vertices(owner))
    opposite = next(k for k, v in enumerate(s) if v not in face)
    g = np.array([float(c) for c in rows[opposite][0]])
    return g / np.linalg.norm(g)


def _face_points(tri, face, count, rng):
    """Points on a face, computed in rational arithmetic then rounded once.

    Weights stay away from the face's own boundary so that short normal
    segments remain inside the two adjacent simplices.
    """
    V = [tri.vertices[k] for k in face]
    m = len(face)
    out = np.empty((count, tri.n))
    for p in range(count):
        w = [Fraction(int(a) + 100) for a in rng.integers(0, 1000, size=m)]
        tot = sum(w)
        out[p] = [float(sum(wi * v[i] for wi, v in zip(w, V)) / tot) for i in range(tri.n)]
    return out


def conformance(pw: Patchwork, samples=100, kmax=5, seed=config.DEFAULT_SEED) -> dict:
    t0 = time.perf_counter()
    tri = pw.tri
    rng = np.random.default_rng(seed)
    names = pw.patch.varnames
    per_simplex = []
    for i in range(len(tri.simplices)):
        verts = tri.simplex_vertices(i)
        pts = _sample_simplex(verts, _barycentric_affine(verts), samples, 0.05, seed + i)
        ranks = verify.rank_map(pw.field, pts).ranks
        want = 2 * tri.ranks[i]
        bad = np.flatnonzero(ranks != want)
        per_simplex.append({
            "simplex": i, "rank_expected": want, "pass": not bad.size,
            "ranks": sorted({int(r) for r in ranks}),
            "witness": pts[bad[0]].tolist() if bad.size else None})
    # exact zeros on every face
    face_pts = np.concatenate([_face_points(tri, f, max(samples // 4, 1), rng) for f in tri.all_faces()])
    vals = np.abs(pw.evaluate(face_pts)).reshape(face_pts.shape[0], -1).max(axis=1)
    bad = np.flatnonzero(vals != 0)
    zero = verify.VerificationReport(
        "face_zero", not bad.size, float(vals.max()) if vals.size else 0.0,
        face_pts[bad[0]].tolist() if bad.size else None, 0.0, {"points": int(face_pts.shape[0])})
    # smooth gluing across shared faces
    shared = []
    for face, a, b in tri.shared_faces():
        nrm = _face_normal(tri, face, a)
        pts = _face_points(tri, face, 20, rng)
        order, worst, witness = kmax, 0.0, None
        for p in pts:
            for c in pw.field.coeffs.values():
                def fn(s, c=c, p=p):
                    q = p[None, :] + np.asarray(s, dtype=float)[:, None] * nrm[None, :]
                    with np.errstate(all="ignore"):
                        return se.evaluate(c, {v: q[:, i] for i, v in enumerate(names)})
                rep = se.flat_order_report(fn, 0.0, kmax)
                worst = max(worst, rep.worst)
                if rep.order < order:
                    order, witness = rep.order, p.tolist()
        # continuity: values at pairs straddling the face
        pair_pts = _face_points(tri, face, samples, rng)
        left = pw.evaluate(pair_pts + 1e-3 * nrm)
        right = pw.evaluate(pair_pts - 1e-3 * nrm)
        jump = float(np.abs(left - right).max()) if pair_pts.size else 0.0
        ok = order >= kmax and worst <= 1e-6 and jump <= 1e-6
        shared.append({"face": list(face), "simplices": [a, b], "order": int(order),
                       "worst_derivative": worst, "continuity_jump": jump, "pass": bool(ok),
                       "witness": witness})
    passed = all(s["pass"] for s in per_simplex) and zero.passed and all(s["pass"] for s in shared)
    return {"pass": bool(passed), "simplices": per_simplex, "face_zero": zero.to_json(),
            "shared_faces": shared, "runtime": time.perf_counter() - t0}


def face_flatness(f: MultivectorField, vertices, per_face=5, kmax=4, seed=config.DEFAULT_SEED):
    """Lowest est_flat_order of the components of ``f`` across the faces of
    the simplex with the given vertices, along inward normals."""
    rows = _barycentric_affine(vertices)
    tri = TriangulationData(vertices, [tuple(range(len(vertices)))], [0])
    rng = np.random.default_rng(seed)
    names = f.patch.varnames
    lowest, witness = kmax, None
    for k in range(len(vertices)):
        face = tuple(i for i in range(len(vertices)) if i != k)
        g = np.array([float(c) for c in rows[k][0]])
        nrm = g / np.linalg.norm(g)
        for p in _face_points(tri, face, per_face, rng):
            for c in f.coeffs.values():
                def fn(s, c=c, p=p):
                    q = p[None, :] + np.asarray(s, dtype=float)[:, None] * nrm[None, :]
                    with np.errstate(all="ignore"):
                        return se.evaluate(c, {v: q[:, i] for i, v in enumerate(names)})
                order = se.flat_order_report(fn, 0.0, kmax).order
                if order < lowest:
                    lowest, witness = order, p.tolist()
    return lowest, witness


def report_to_json(report: dict) -> str:
    """Deterministic JSON of a conformance report (runtime left out)."""
    clean = {k: v for k, v in report.items() if k != "runtime"}
    return json.dumps(verify._jsonable(clean), indent=2, sort_keys=True)
