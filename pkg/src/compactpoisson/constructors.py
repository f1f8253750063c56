"""Compactly supported Poisson structures built from explicit seeds."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import exterior as ex
from . import symexpr as se
from .exterior import MultivectorField
from .symexpr import PatchSpec
from .taper import FlatTaper, CasimirBump, make_bump, make_separating_bumps

__all__ = [
    "ConstructionError", "CollarBivector", "LieAlgebraData", "PolyPoisson",
    "collar_extend", "ball_support", "BallSupported", "radial_map", "lie_linear",
    "constant_rank", "product", "first_jet_extension", "seeds",
]


class ConstructionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# collar structures

@dataclass
class CollarBivector:
    """pi = sum_i exp(lam_i t) (d_t ^ V_i + W_i) on N x R, t the last variable."""

    patch: PatchSpec
    components: list  # (lam, V: deg-1 field on patch, W: deg-2 field on patch)

    def __post_init__(self):
        if self.patch.collar_var is None:
            raise ConstructionError("collar patch needs a collar variable")
        tv = self.patch.collar_var
        for lam, V, W in self.components:
            for fld in (V, W):
                if fld is None:
                    continue
                if fld.patch != self.patch:
                    raise ConstructionError("component fields must live on the collar patch")
                for c in fld.coeffs.values():
                    if tv in se.free_vars(c):
                        raise ConstructionError("V and W must not depend on the collar coordinate")
                if fld.degree == 1 and fld.coeffs.get((self.t_index,)) is not None:
                    raise ConstructionError("V must be tangent to the boundary")
                if fld.degree == 2 and any(self.t_index in k for k in fld.coeffs):
                    raise ConstructionError("W must be tangent to the boundary")

    @property
    def t_index(self):
        return self.patch.varnames.index(self.patch.collar_var)

    def assembled(self) -> MultivectorField:
        t = se.var(self.patch.collar_var)
        return _collar_sum(self, lambda lam: (se.exp(se.mul(lam, t)),) * 2)

    def to_json(self):
        names = list(self.patch.varnames)
        base = [v for v in names if v != self.patch.collar_var]
        comps = []
        for lam, V, W in self.components:
            ent = {"weight": str(Fraction(lam))}
            if V is not None:
                ent["V"] = [{"i": base.index(names[a]) + 1, "poly": _poly_json(c, base)}
                            for (a,), c in sorted(V.coeffs.items())]
            if W is not None:
                ent["W"] = [{"i": base.index(names[a]) + 1, "j": base.index(names[b]) + 1,
                             "poly": _poly_json(c, base)} for (a, b), c in sorted(W.coeffs.items())]
            comps.append(ent)
        reg = self.patch.region
        return {"varnames": base, "collar_var": self.patch.collar_var,
                "bounds": [list(b) for b in reg.get("bounds", [])], "t0": reg.get("t0", -0.1),
                "components": comps}

    @classmethod
    def from_json(cls, d):
        """``{"varnames", "collar_var", "bounds", "components": [{"weight", "V", "W"}]}``;
        V and W entries carry 1-based boundary indices and polynomial coefficients."""
        try:
            base = list(d["varnames"])
            tv = d.get("collar_var", "t")
            bounds = [tuple(map(float, b)) for b in d.get("bounds") or [(-1.0, 1.0)] * len(base)]
            patch = PatchSpec(base + [tv], {"kind": "collar", "bounds": bounds, "t0": float(d.get("t0", -0.1))},
                              collar_var=tv)
            comps = []
            for r, ent in enumerate(d["components"]):
                lam = Fraction(str(ent["weight"]))
                V = W = None
                if ent.get("V"):
                    V = MultivectorField(patch, 1, {
                        (int(e["i"]) - 1,): _poly_from_json(e["poly"], base, f"components[{r}].V")
                        for e in ent["V"]})
                if ent.get("W"):
                    W = MultivectorField(patch, 2, {
                        (int(e["i"]) - 1, int(e["j"]) - 1): _poly_from_json(e["poly"], base, f"components[{r}].W")
                        for e in ent["W"]})
                comps.append((lam, V, W))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConstructionError):
                raise
            raise ConstructionError(f"collar JSON: missing or bad field {exc}") from None
        return cls(patch, comps)

    def validate(self, points, tol=1e-8):
        from .verify import jacobi_residual  # local import: verify depends on us
        rep = jacobi_residual(self.assembled(), points)
        if rep.worst > tol:
            raise ConstructionError(
                f"collar bivector is not Poisson: residual {rep.worst:.3g} at {rep.witness}")
        return rep


def _poly_json(c, names):
    p = se.to_poly(c, names)
    if p is None:
        raise ConstructionError("only polynomial collar coefficients can be serialised")
    return [{"coef": str(v), "exp": list(e)} for e, v in sorted(p.items())]


def _poly_from_json(terms, names, where):
    poly = {}
    for m in terms:
        e = tuple(int(x) for x in m["exp"])
        if len(e) != len(names):
            raise ConstructionError(f"{where}: exponent length {len(e)} != {len(names)}")
        poly[e] = poly.get(e, 0) + Fraction(str(m["coef"]))
    return se.from_poly(poly, names)


def _collar_sum(cb, weights):
    ti = cb.t_index
    out = {}

    def acc(key, val):
        k, sign = ex.sort_sign(key)
        val = se.mul(sign, val)
        out[k] = se.add(out[k], val) if k in out else val

    for lam, V, W in cb.components:
        wv, ww = weights(Fraction(lam))
        if V is not None:
            for (a,), c in V.coeffs.items():
                acc((ti, a), se.mul(wv, c))
        if W is not None:
            for key, c in W.coeffs.items():
                acc(key, se.mul(ww, c))
    return MultivectorField(cb.patch, 2, out)


def collar_extend(cb: CollarBivector, taper: FlatTaper, bump: CasimirBump | None = None) -> MultivectorField:
    """g(t) sum_i exp(lam_i f) ((1/f') d_t ^ V_i + W_i), exact past t = 1."""
    for lam, _, _ in cb.components:
        if lam > 0:
            raise ConstructionError(f"unsupported positive weight {lam}: only weights <= 0 extend")
    tv = cb.patch.collar_var
    sub = {taper.var: se.var(tv)} if taper.var != tv else None
    bump = bump or make_bump(1, 2, tv)

    def weights(lam):
        gv = taper.gadget(0, -1, lam)
        gw = taper.gadget(0, 0, lam)
        if sub:
            gv, gw = se.subs(gv, sub), se.subs(gw, sub)
        return gv, gw

    pi = _collar_sum(cb, weights)
    g = bump.at(se.var(tv)).expr
    return pi.scale(g)


# ---------------------------------------------------------------------------
# polynomial seeds

class LieAlgebraData:
    """Structure constants c[(i, j, k)] = c^k_ij (0-based), antisymmetrically closed."""

    def __init__(self, dim: int, constants):
        self.dim = int(dim)
        c = {}
        for (i, j, k), v in (constants.items() if isinstance(constants, dict) else
                             (((a, b, d), val) for a, b, d, val in constants)):
            v = Fraction(v)
            for idx in (i, j, k):
                if not 0 <= idx < self.dim:
                    raise ConstructionError(f"structure constant index {idx} out of range")
            if i == j:
                if v != 0:
                    raise ConstructionError(f"c^{k + 1}_{i + 1}{j + 1} must vanish")
                continue
            for key, val in (((i, j, k), v), ((j, i, k), -v)):
                if key in c and c[key] != val:
                    raise ConstructionError(f"inconsistent antisymmetric closure at {tuple(x + 1 for x in key)}")
                c[key] = val
        self.c = {k: v for k, v in c.items() if v != 0}

    def const(self, i, j, k):
        return self.c.get((i, j, k), Fraction(0))

    def jacobi_violation(self):
        """First (i, j, k, l) (1-based) with a nonzero Jacobi sum, or None."""
        n = self.dim
        for i, j, k, l in itertools.product(range(n), repeat=4):
            s = sum(self.const(i, j, m) * self.const(m, k, l) + self.const(j, k, m) * self.const(m, i, l)
                    + self.const(k, i, m) * self.const(m, j, l) for m in range(n))
            if s != 0:
                return (i + 1, j + 1, k + 1, l + 1)
        return None

    @classmethod
    def from_json(cls, d):
        try:
            dim = int(d["dim"])
            rows = d["c"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConstructionError(f"Lie algebra JSON: missing or bad field {exc}") from None
        consts = {}
        for r, row in enumerate(rows):
            if len(row) != 4:
                raise ConstructionError(f"Lie algebra JSON: entry c[{r}] must be [i, j, k, value]")
            i, j, k, v = row
            consts[(int(i) - 1, int(j) - 1, int(k) - 1)] = Fraction(str(v))
        return cls(dim, consts)

    def to_json(self):
        return {"dim": self.dim,
                "c": [[i + 1, j + 1, k + 1, str(v)] for (i, j, k), v in sorted(self.c.items()) if i < j]}


class PolyPoisson:
    """Bivector with polynomial coefficients of degree <= 2."""

    def __init__(self, pi: MultivectorField, check=True):
        if pi.degree != 2:
            raise ConstructionError("a bivector is required")
        self.pi = pi
        self.patch = pi.patch
        names = pi.patch.varnames
        self._polys = {}
        for k, c in pi.coeffs.items():
            p = se.to_poly(c, names)
            if p is None:
                raise ConstructionError(f"coefficient {k} is not a polynomial")
            deg = max((sum(e) for e in p), default=0)
            if deg > 2:
                raise ConstructionError(
                    f"coefficient {tuple(i + 1 for i in k)} has degree {deg} > 2; weights would be positive")
            self._polys[k] = p
        if check:
            res = ex.schouten(pi, pi)
            bad = {k: c for k, c in res.coeffs.items() if not se.is_zero(c)}
            if bad:
                k, c = next(iter(bad.items()))
                raise ConstructionError(
                    f"not Poisson: [pi,pi] component {tuple(i + 1 for i in k)} = "
                    f"{se.from_poly(se.to_poly(c, names) or {}, names) if se.to_poly(c, names) is not None else c}")

    def homogeneous_parts(self):
        """{degree: bivector} with homogeneous polynomial coefficients."""
        names = self.patch.varnames
        parts = {}
        for k, p in self._polys.items():
            for e, c in p.items():
                parts.setdefault(sum(e), {}).setdefault(k, {})[e] = c
        return {d: MultivectorField(self.patch, 2, {k: se.from_poly(p, names) for k, p in tab.items()})
                for d, tab in sorted(parts.items())}

    def to_json(self):
        names = self.patch.varnames
        ents = []
        for (i, j), p in self._polys.items():
            ents.append({"i": i + 1, "j": j + 1,
                         "poly": [{"coef": str(c), "exp": list(e)} for e, c in sorted(p.items())]})
        return {"dim": self.patch.dim, "varnames": list(names), "entries": ents}

    @classmethod
    def from_json(cls, d):
        try:
            n = int(d["dim"])
            names = d.get("varnames") or [f"x{i + 1}" for i in range(n)]
            patch = PatchSpec(names)
            coeffs = {}
            for r, ent in enumerate(d["entries"]):
                i, j = int(ent["i"]) - 1, int(ent["j"]) - 1
                poly = {}
                for m in ent["poly"]:
                    e = tuple(int(x) for x in m["exp"])
                    if len(e) != n:
                        raise ConstructionError(f"entries[{r}]: exponent length {len(e)} != dim {n}")
                    poly[e] = poly.get(e, 0) + Fraction(str(m["coef"]))
                coeffs[(i, j)] = se.add(coeffs.get((i, j), se.ZERO), se.from_poly(poly, names))
        except (KeyError, TypeError) as exc:
            raise ConstructionError(f"polynomial Poisson JSON: missing or bad field {exc}") from None
        return cls(MultivectorField(patch, 2, coeffs))


def _default_names(n):
    return ["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)]


def lie_linear(la: LieAlgebraData, varnames=None) -> PolyPoisson:
    """pi^{ij} = sum_k c^k_ij x_k."""
    bad = la.jacobi_violation()
    if bad is not None:
        raise ConstructionError(f"structure constants violate the Jacobi identity at (i,j,k,l)={bad}")
    patch = PatchSpec(varnames or _default_names(la.dim))
    xs = patch.vars()
    coeffs = {}
    for i, j in itertools.combinations(range(la.dim), 2):
        terms = [se.mul(la.const(i, j, k), xs[k]) for k in range(la.dim) if la.const(i, j, k)]
        if terms:
            coeffs[(i, j)] = se.add(*terms)
    return PolyPoisson(MultivectorField(patch, 2, coeffs))


def constant_rank(n: int, r: int, varnames=None) -> PolyPoisson:
    if r < 0 or 2 * r > n:
        raise ConstructionError(f"rank 2r={2 * r} exceeds dimension {n}")
    patch = PatchSpec(varnames or _default_names(n))
    return PolyPoisson(MultivectorField(patch, 2, {(2 * i, 2 * i + 1): 1 for i in range(r)}))


# ---------------------------------------------------------------------------
# ball support

@dataclass
class BallSupported:
    field: MultivectorField
    source: PolyPoisson
    taper: FlatTaper
    bump: CasimirBump
    t_end: int
    tau: se.Expr
    t_expr: se.Expr
    inner_radius: Fraction = Fraction(1, 2)
    outer_radius: Fraction = Fraction(1)
    center: tuple = None
    meta: dict = field(default_factory=dict)


def _radius_sq(xs):
    return se.add(*[se.power(x, 2) for x in xs])


def ball_support(p: PolyPoisson, taper: FlatTaper, bump: CasimirBump | None = None) -> BallSupported:
    """Poisson structure equal to ``p`` on |x| < 1/2 and zero for |x| >= 1.

    Each homogeneous part pi_d has Euler weight d - 2.  With the log-radial
    coordinate t = ln(2|x|)/tau the structure is pulled back by the radial
    map x -> exp(tau (f(t) - t)) x, whose effect is the closed form

        s^{d-2} (pi_d + (1/f' - 1) (u u^T pi_d + pi_d u u^T)),  u = x/|x|.

    Without a quadratic part everything is flat at t = 1 (|x| = 1).  With a
    quadratic part the weight-0 piece survives past t = 1 as the tangential
    projection of pi_2 and is cut off by the bump between t = 1 and t = 2.
    """
    if p.pi.is_structurally_zero():
        raise ConstructionError("ball support needs a nonzero bivector")
    parts = p.homogeneous_parts()
    has_quad = 2 in parts
    t_end = 2 if has_quad else 1
    patch = p.patch
    n = patch.dim
    xs = patch.vars()
    r2 = _radius_sq(xs)
    tau = se.div(se.log(2), t_end)
    t_expr = se.div(se.log(se.mul(4, r2)), se.mul(2, tau))
    tsub = {taper.var: t_expr}
    bump = bump or make_bump(1, 2)
    body = {}

    def acc(key, val):
        body[key] = se.add(body[key], val) if key in body else val

    for d, pid in parts.items():
        lam = Fraction(d - 2)
        # exp(-lam_d t) written in closed form: (2|x|)^(2-d)
        if d == 0:
            pre = se.mul(4, r2)
        elif d == 1:
            pre = se.mul(2, se.sqrt(r2))
        else:
            pre = se.ONE
        weight = se.mul(lam, tau)
        e_w = se.subs(taper.gadget(0, 0, weight), tsub)
        e_wp = se.subs(taper.gadget(0, -1, weight), tsub)
        E = se.mul(pre, e_w)
        Ep = se.mul(pre, e_wp)
        P = pid.matrix()
        # radial products: (pi x)_i and (x^T pi)_j
        pix = [se.add(*[se.mul(P[i][k], xs[k]) for k in range(n)]) for i in range(n)]
        xpi = [se.add(*[se.mul(xs[k], P[k][j]) for k in range(n)]) for j in range(n)]
        names = patch.varnames
        for i, j in itertools.combinations(range(n), 2):
            # M = u u^T pi + pi u u^T and the tangential part T = pi - M, both over r^2
            m_num = se.add(se.mul(xs[i], xpi[j]), se.mul(pix[i], xs[j]))
            t_num = se.sub(se.mul(r2, P[i][j]), m_num)
            m_num = se.from_poly(se.to_poly(m_num, names), names)
            t_num = se.from_poly(se.to_poly(t_num, names), names)
            term = se.add(se.mul(E, se.div(t_num, r2)), se.mul(Ep, se.div(m_num, r2)))
            if term is not se.ZERO:
                acc((i, j), term)
    g = bump.at(t_expr).expr if has_quad else se.ONE
    out = {}
    for (i, j), b in body.items():
        inner = p.pi[i, j]
        out[(i, j)] = se.piecewise(r2, Fraction(1, 4), inner,
                                   se.piecewise(r2, 1, se.mul(b, g), se.ZERO))
    for (i, j), c in p.pi.coeffs.items():
        if (i, j) not in out:
            out[(i, j)] = se.piecewise(r2, Fraction(1, 4), c, se.ZERO)
    fld = MultivectorField(patch, 2, out)
    return BallSupported(fld, p, taper, bump, t_end, tau, t_expr,
                         meta={"taper": taper.describe(), "bump": bump.describe(), "t_end": t_end})


def radial_map(bs: BallSupported) -> ex.ExplicitMap:
    """x -> exp(tau (f(t) - t)) x: the map whose pullback the closed form encodes."""
    patch = bs.field.patch
    s = se.exp(se.mul(bs.tau, se.sub(se.subs(bs.taper.f, {bs.taper.var: bs.t_expr}), bs.t_expr)))
    return ex.ExplicitMap(patch, patch, [se.mul(s, x) for x in patch.vars()])


# ---------------------------------------------------------------------------
# products

def _enclosure_halfwidth(n):
    # inside B_2 when possible (a box of half-width c sits in B_2 iff c <= 2/sqrt(n))
    c = 2 / math.sqrt(n)
    return Fraction(str(round((1 + c) / 2, 2))) if c > 1 else Fraction(2)


@dataclass
class ProductResult:
    field: MultivectorField
    chi1: se.Expr
    chi2: se.Expr
    support_boxes: tuple
    enclosures: tuple


def product(pi1: MultivectorField, pi2: MultivectorField, support1=None, support2=None,
            enclosure1=None, enclosure2=None) -> ProductResult:
    """Pi = chi2(y) pi1(x) + chi1(x) pi2(y) on the product patch.

    ``support_i`` is a box (list of (lo, hi)) containing supp(pi_i) and
    ``enclosure_i`` a strictly larger box; chi_i is 1 on the first and 0 off
    the second.  Defaults: supp(pi_i) in the closed unit ball, plateau
    slightly larger than [-1, 1]^n, enclosure inside B_2 when n <= 3.
    """
    p1, p2 = pi1.patch, pi2.patch
    if set(p1.varnames) & set(p2.varnames):
        raise ConstructionError("factor patches must use distinct variable names")
    n1, n2 = p1.dim, p2.dim
    boxes = []
    for n, sup, enc in ((n1, support1, enclosure1), (n2, support2, enclosure2)):
        if enc is None:
            c = _enclosure_halfwidth(n)
            enc = [(-c, c)] * n
        if sup is None:
            c = enc[0][1]
            a = Fraction(str(round(float(1 + (Fraction(c) - 1) / 3), 3)))
            sup = [(-a, a)] * n
        for (a, b), (A, B) in zip(sup, enc):
            if not (A < a < b < B):
                raise ConstructionError(f"support box ({a}, {b}) is not strictly inside enclosure ({A}, {B})")
        boxes.append((sup, enc))
    chi1 = make_separating_bumps(boxes[0][0], boxes[0][1], p1.varnames)
    chi2 = make_separating_bumps(boxes[1][0], boxes[1][1], p2.varnames)
    patch = PatchSpec(p1.varnames + p2.varnames)
    coeffs = {}
    for k, c in pi1.coeffs.items():
        coeffs[k] = se.mul(chi2, c)
    for (i, j), c in pi2.coeffs.items():
        coeffs[(i + n1, j + n1)] = se.mul(chi1, c)
    return ProductResult(MultivectorField(patch, 2, coeffs), chi1, chi2,
                         (boxes[0][0], boxes[1][0]), (boxes[0][1], boxes[1][1]))


# ---------------------------------------------------------------------------
# first jets

def _affine_truncation(c, names, center):
    shift = {v: se.add(se.var(v), se.const(x0)) for v, x0 in zip(names, center)}
    p = se.to_poly(se.subs(c, shift), names)
    if p is not None:
        return {e: v for e, v in p.items() if sum(e) <= 1}
    # non-polynomial coefficient: value and gradient at the center
    pt = dict(zip(names, (float(x) for x in center)))
    out = {(0,) * len(names): Fraction(se.eval_point(c, pt))}
    for i, v in enumerate(names):
        e = [0] * len(names)
        e[i] = 1
        out[tuple(e)] = Fraction(se.eval_point(se.diff(c, v), pt))
    return {e: v for e, v in out.items() if v != 0}


def first_jet_extension(pi: MultivectorField, center, taper: FlatTaper, bump=None) -> BallSupported:
    """Ball-supported structure with the same first jet as ``pi`` at ``center``.

    The coordinates must already split ``pi`` as a constant symplectic part
    plus a part vanishing at the center; the affine truncation is checked to
    be Poisson, extended by :func:`ball_support` in coordinates centred at
    ``center``, and translated back.
    """
    names = pi.patch.varnames
    center = tuple(Fraction(str(x)) for x in center)
    if len(center) != len(names):
        raise ConstructionError("center has the wrong dimension")
    aff = MultivectorField(pi.patch, 2, {k: se.from_poly(_affine_truncation(c, names, center), names)
                                         for k, c in pi.coeffs.items()})
    res = ex.schouten(aff, aff)
    for k, c in res.coeffs.items():
        p = se.to_poly(c, names)
        if p:
            raise ConstructionError(
                f"affine truncation is not Poisson: [pi,pi] component {tuple(i + 1 for i in k)} = "
                f"{se.from_poly(p, names)}")
    bs = ball_support(PolyPoisson(aff, check=False), taper, bump)
    back = {v: se.sub(se.var(v), x0) for v, x0 in zip(names, center)}
    bs.field = bs.field.subs(back)
    bs.t_expr = se.subs(bs.t_expr, back)
    bs.center = center
    bs.meta["center"] = [str(x) for x in center]
    return bs


# ---------------------------------------------------------------------------
# seeds used throughout the tests and the gallery

def _seed_affine():
    patch = PatchSpec(["x", "y"])
    return PolyPoisson(MultivectorField(patch, 2, {(0, 1): se.add(se.var("y"), 1)}))


def _seed_quadratic():
    # B = grad(xyz + x): pi^{23} = yz + 1, pi^{31} = xz, pi^{12} = xy
    patch = PatchSpec(["x", "y", "z"])
    x, y, z = patch.vars()
    return PolyPoisson(MultivectorField(patch, 2, {
        (1, 2): se.add(se.mul(y, z), 1), (2, 0): se.mul(x, z), (0, 1): se.mul(x, y)}))


def so3():
    return LieAlgebraData(3, {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1})


def heisenberg():
    return LieAlgebraData(3, {(0, 1, 2): 1})


def seeds():
    """Named polynomial Poisson seeds."""
    return {
        "constant-r2": constant_rank(2, 1),
        "rank2-r4": constant_rank(4, 1),
        "so3": lie_linear(so3()),
        "heisenberg": lie_linear(heisenberg()),
        "affine": _seed_affine(),
        "quadratic": _seed_quadratic(),
    }
