"""Forms, multivector fields and mixed-degree spinors on a coordinate patch.

Coefficients are stored on strictly increasing index tuples (0-based);
lookups of permuted tuples return the signed coefficient.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from . import config
from . import symexpr as se
from .symexpr import Expr, PatchSpec

__all__ = [
    "ExteriorError", "DiffeomorphismError", "FormField", "MultivectorField",
    "Spinor", "ExplicitMap", "wedge", "exterior_d", "interior", "schouten",
    "lie_derivative", "pullback_form", "pullback_bivector", "exp_form",
    "spinor_to_poisson", "spinor_bivector", "SpinorPoissonResult",
    "field_to_json", "field_from_json", "bivector", "vector_field",
    "form", "sort_sign", "perm_sign", "euler_field", "sym_det", "sym_inverse",
]


class ExteriorError(Exception):
    pass


class DiffeomorphismError(ExteriorError):
    pass


def perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
            elif seq[i] == seq[j]:
                return 0
    return sign


def sort_sign(idx):
    """(sorted tuple, sign); sign 0 when an index repeats."""
    s = perm_sign(idx)
    return tuple(sorted(idx)), s


class _AltField:
    """Antisymmetric coefficient table shared by forms and multivectors."""

    contravariant = False
    __slots__ = ("patch", "degree", "coeffs")

    def __init__(self, patch: PatchSpec, degree: int, coeffs=None):
        if degree < 0 or (degree > patch.dim and coeffs):
            raise ExteriorError(f"degree {degree} out of range for dimension {patch.dim}")
        table = {}
        pos = {v: i for i, v in enumerate(patch.varnames)}
        for idx, c in (coeffs or {}).items():
            if isinstance(idx, (int, str)):
                idx = (idx,)
            idx = tuple(pos[i] if isinstance(i, str) else int(i) for i in idx)
            if len(idx) != degree or any(not 0 <= i < patch.dim for i in idx):
                raise ExteriorError(f"bad index tuple {idx} for degree {degree}")
            key, sign = sort_sign(idx)
            if sign == 0:
                continue
            c = se._e(c)
            if sign < 0:
                c = se.neg(c)
            table[key] = se.add(table[key], c) if key in table else c
        self.patch = patch
        self.degree = degree
        self.coeffs = {k: v for k, v in sorted(table.items()) if v is not se.ZERO}

    def _new(self, degree, coeffs):
        return type(self)(self.patch, degree, coeffs)

    def __getitem__(self, idx):
        if isinstance(idx, int):
            idx = (idx,)
        key, sign = sort_sign(idx)
        if sign == 0:
            return se.ZERO
        c = self.coeffs.get(key, se.ZERO)
        return c if sign > 0 else se.neg(c)

    def items(self):
        return self.coeffs.items()

    def is_structurally_zero(self):
        return not self.coeffs

    def _check(self, other):
        if type(other) is not type(self):
            raise ExteriorError(f"cannot combine {type(self).__name__} and {type(other).__name__}")
        if other.patch != self.patch:
            raise ExteriorError("patch mismatch")
        if other.degree != self.degree:
            raise ExteriorError("degree mismatch")

    def __add__(self, other):
        self._check(other)
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = se.add(out[k], v) if k in out else v
        return self._new(self.degree, out)

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s):
        s = se._e(s)
        return self._new(self.degree, {k: se.mul(s, v) for k, v in self.coeffs.items()})

    __rmul__ = scale

    def map(self, fn):
        return self._new(self.degree, {k: fn(v) for k, v in self.coeffs.items()})

    def subs(self, mapping):
        return self.map(lambda e: se.subs(e, mapping))

    def with_patch(self, patch):
        if patch.varnames != self.patch.varnames:
            raise ExteriorError("variable names differ")
        return type(self)(patch, self.degree, self.coeffs)

    def dense(self, points, evaluator=None) -> np.ndarray:
        """Full antisymmetric array of shape (N,) + (dim,) * degree."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.patch.dim
        env = {v: pts[:, i] for i, v in enumerate(self.patch.varnames)}
        out = np.zeros((pts.shape[0],) + (n,) * self.degree)
        ev = evaluator or se.evaluate
        for key, c in self.coeffs.items():
            val = ev(c, env)
            for perm in itertools.permutations(range(self.degree)):
                idx = tuple(key[p] for p in perm)
                out[(slice(None),) + idx] = perm_sign(perm) * val
        return out

    def component_values(self, points):
        """Values of the stored (increasing-index) components, shape (N, m)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        env = {v: pts[:, i] for i, v in enumerate(self.patch.varnames)}
        keys = list(itertools.combinations(range(self.patch.dim), self.degree))
        out = np.zeros((pts.shape[0], len(keys)))
        for j, key in enumerate(keys):
            c = self.coeffs.get(key)
            if c is not None:
                out[:, j] = se.evaluate(c, env)
        return keys, out

    def __repr__(self):
        names = self.patch.varnames
        sym = "d" if not self.contravariant else "∂"
        parts = [f"({c})*" + "^".join(sym + names[i] for i in k) for k, c in self.coeffs.items()]
        return f"{type(self).__name__}[{self.degree}](" + " + ".join(parts) + ")"


class FormField(_AltField):
    __slots__ = ()
    contravariant = False


class MultivectorField(_AltField):
    __slots__ = ()
    contravariant = True

    def matrix(self):
        """Symbolic n x n coefficient matrix of a bivector."""
        if self.degree != 2:
            raise ExteriorError("matrix() needs a bivector")
        n = self.patch.dim
        return [[self[i, j] if i != j else se.ZERO for j in range(n)] for i in range(n)]


def form(patch, degree, coeffs=None) -> FormField:
    return FormField(patch, degree, coeffs)


def bivector(patch, coeffs=None) -> MultivectorField:
    return MultivectorField(patch, 2, coeffs)


def vector_field(patch, coeffs=None) -> MultivectorField:
    return MultivectorField(patch, 1, coeffs)


def euler_field(patch) -> MultivectorField:
    return vector_field(patch, {i: v for i, v in enumerate(patch.vars())})


# ---------------------------------------------------------------------------
# spinors

class Spinor:
    """Mixed-degree form: at most one FormField per degree."""

    __slots__ = ("patch", "parts")

    def __init__(self, patch, parts=None):
        self.patch = patch
        table = {}
        for p in (parts.values() if isinstance(parts, dict) else parts or ()):
            if not isinstance(p, FormField):
                raise ExteriorError("spinor parts must be forms")
            if p.patch != patch:
                raise ExteriorError("patch mismatch")
            table[p.degree] = table[p.degree] + p if p.degree in table else p
        self.parts = {d: f for d, f in sorted(table.items()) if not f.is_structurally_zero()}

    @classmethod
    def scalar(cls, patch, c):
        return cls(patch, [FormField(patch, 0, {(): c})])

    def part(self, degree) -> FormField:
        return self.parts.get(degree, FormField(self.patch, degree))

    def degrees(self):
        return sorted(self.parts)

    def __add__(self, other):
        return Spinor(self.patch, list(self.parts.values()) + list(_as_spinor(other, self.patch).parts.values()))

    def scale(self, s):
        return Spinor(self.patch, [p.scale(s) for p in self.parts.values()])

    def map(self, fn):
        return Spinor(self.patch, [p.map(fn) for p in self.parts.values()])

    def __repr__(self):
        return "Spinor(" + " + ".join(repr(p) for p in self.parts.values()) + ")"


def _as_spinor(a, patch=None):
    if isinstance(a, Spinor):
        return a
    if isinstance(a, FormField):
        return Spinor(a.patch, [a])
    raise ExteriorError(f"not a form or spinor: {type(a).__name__}")


# ---------------------------------------------------------------------------
# algebra

def _wedge_tables(a: _AltField, b: _AltField):
    out = {}
    for ka, ca in a.coeffs.items():
        sa = set(ka)
        for kb, cb in b.coeffs.items():
            if sa.intersection(kb):
                continue
            key, sign = sort_sign(ka + kb)
            term = se.mul(sign, ca, cb)
            out[key] = se.add(out[key], term) if key in out else term
    return out


def wedge(a, b):
    """Graded antisymmetric product of forms, multivectors or spinors."""
    if isinstance(a, Spinor) or isinstance(b, Spinor):
        sa, sb = _as_spinor(a), _as_spinor(b)
        if sa.patch != sb.patch:
            raise ExteriorError("patch mismatch")
        parts = []
        for pa in sa.parts.values():
            for pb in sb.parts.values():
                if pa.degree + pb.degree <= sa.patch.dim:
                    parts.append(wedge(pa, pb))
        return Spinor(sa.patch, parts)
    if type(a) is not type(b):
        raise ExteriorError("wedge needs two forms or two multivectors")
    if a.patch != b.patch:
        raise ExteriorError("patch mismatch")
    deg = a.degree + b.degree
    if deg > a.patch.dim:
        return type(a)(a.patch, deg)
    return type(a)(a.patch, deg, _wedge_tables(a, b))


def wedge_power(a: FormField, k: int) -> FormField:
    out = FormField(a.patch, 0, {(): 1})
    for _ in range(k):
        out = wedge(out, a)
    return out


def exp_form(omega: FormField) -> Spinor:
    """e^omega for a 2-form: finite sum of omega^j / j!."""
    if omega.degree != 2:
        raise ExteriorError("exp_form needs a 2-form")
    parts = [FormField(omega.patch, 0, {(): 1})]
    cur = parts[0]
    for j in range(1, omega.patch.dim // 2 + 1):
        cur = wedge(cur, omega).scale(se.const(se.Fraction(1, j)))
        if cur.is_structurally_zero():
            break
        parts.append(cur)
    return Spinor(omega.patch, parts)


def exterior_d(a):
    if isinstance(a, Spinor):
        return Spinor(a.patch, [exterior_d(p) for p in a.parts.values() if p.degree < a.patch.dim])
    if not isinstance(a, FormField):
        raise ExteriorError("exterior_d needs a form")
    if a.degree >= a.patch.dim:
        return FormField(a.patch, a.degree + 1)
    names = a.patch.varnames
    out = {}
    for key, c in a.coeffs.items():
        for l, v in enumerate(names):
            if l in key:
                continue
            dc = se.diff(c, v)
            if dc is se.ZERO:
                continue
            k2, sign = sort_sign((l,) + key)
            term = se.mul(sign, dc)
            out[k2] = se.add(out[k2], term) if k2 in out else term
    return FormField(a.patch, a.degree + 1, out)


def interior(X: MultivectorField, a):
    """Contraction of a vector field into a form (or spinor): first slot."""
    if isinstance(a, Spinor):
        return Spinor(a.patch, [interior(X, p) for p in a.parts.values() if p.degree > 0])
    if X.degree != 1 or not isinstance(a, FormField):
        raise ExteriorError("interior needs a vector field and a form")
    if X.patch != a.patch:
        raise ExteriorError("patch mismatch")
    if a.degree == 0:
        return FormField(a.patch, 0, {})
    out = {}
    for key, c in a.coeffs.items():
        for pos, l in enumerate(key):
            x = X.coeffs.get((l,))
            if x is None:
                continue
            rest = key[:pos] + key[pos + 1:]
            term = se.mul((-1) ** pos, x, c)
            out[rest] = se.add(out[rest], term) if rest in out else term
    return FormField(a.patch, a.degree - 1, out)


def sharp(pi: MultivectorField, xi: FormField) -> MultivectorField:
    """pi^#(xi) = xi_i pi^{ij} d_j."""
    n = pi.patch.dim
    out = {}
    for j in range(n):
        terms = [se.mul(xi[i], pi[i, j]) for i in range(n) if i != j and (i,) in xi.coeffs]
        if terms:
            out[(j,)] = se.add(*terms)
    return MultivectorField(pi.patch, 1, out)


def _grad_table(field: _AltField):
    names = field.patch.varnames
    return {key: [se.diff(c, v) for v in names] for key, c in field.coeffs.items()}


def schouten(a: MultivectorField, b: MultivectorField) -> MultivectorField:
    """Schouten bracket of two bivectors, or of a vector field with a multivector."""
    if a.patch != b.patch:
        raise ExteriorError("patch mismatch")
    if a.degree == 1:
        return lie_derivative(a, b)
    if a.degree != 2 or b.degree != 2:
        raise ExteriorError("schouten supports (2,2) and (1,p) brackets")
    n = a.patch.dim
    names = a.patch.varnames
    da = {k: [se.diff(c, v) for v in names] for k, c in a.coeffs.items()}
    db = {k: [se.diff(c, v) for v in names] for k, c in b.coeffs.items()}

    def d_of(table, i, j, l):
        key, sign = sort_sign((i, j))
        g = table.get(key)
        if g is None or sign == 0:
            return se.ZERO
        return g[l] if sign > 0 else se.neg(g[l])

    out = {}
    for i, j, k in itertools.combinations(range(n), 3):
        terms = []
        for (p, q, r) in ((i, j, k), (j, k, i), (k, i, j)):
            for l in range(n):
                terms.append(se.mul(a[l, p], d_of(db, q, r, l)))
                terms.append(se.mul(b[l, p], d_of(da, q, r, l)))
        out[(i, j, k)] = se.add(*terms)
    return MultivectorField(a.patch, 3, out)


def lie_derivative(X: MultivectorField, a):
    """L_X a: Cartan formula on forms, bracket [X, a] on multivectors."""
    if X.degree != 1:
        raise ExteriorError("lie_derivative needs a vector field")
    if isinstance(a, Spinor):
        return Spinor(a.patch, [lie_derivative(X, p) for p in a.parts.values()])
    if X.patch != a.patch:
        raise ExteriorError("patch mismatch")
    if isinstance(a, FormField):
        left = interior(X, exterior_d(a)) if a.degree < a.patch.dim else FormField(a.patch, a.degree)
        if a.degree == 0:
            return left
        return left + exterior_d(interior(X, a))
    names = a.patch.varnames
    n = a.patch.dim
    out = {}
    for key in itertools.combinations(range(n), a.degree):
        terms = []
        for l in range(n):
            x = X.coeffs.get((l,))
            c = a.coeffs.get(key)
            if x is not None and c is not None:
                terms.append(se.mul(x, se.diff(c, names[l])))
        for s, i in enumerate(key):
            for l in range(n):
                c = a[key[:s] + (l,) + key[s + 1:]]
                if c is se.ZERO or (i,) not in X.coeffs:
                    continue
                terms.append(se.neg(se.mul(c, se.diff(X.coeffs[(i,)], names[l]))))
        if terms:
            out[key] = se.add(*terms)
    return MultivectorField(a.patch, a.degree, out)


# ---------------------------------------------------------------------------
# symbolic linear algebra for small matrices

def sym_det(m):
    n = len(m)
    memo = {}

    def minor(rows, cols):
        key = (rows, cols)
        if key in memo:
            return memo[key]
        if len(rows) == 1:
            r = m[rows[0]][cols[0]]
        else:
            terms = []
            r0 = rows[0]
            for pos, c in enumerate(cols):
                entry = m[r0][c]
                if entry is se.ZERO:
                    continue
                sub = minor(rows[1:], cols[:pos] + cols[pos + 1:])
                terms.append(se.mul((-1) ** pos, entry, sub))
            r = se.add(*terms)
        memo[key] = r
        return r

    return minor(tuple(range(n)), tuple(range(n))), minor


def sym_inverse(m):
    """(inverse, det) by the adjugate formula."""
    n = len(m)
    det, minor = sym_det(m)
    if det is se.ZERO:
        raise DiffeomorphismError("Jacobian determinant is identically zero")
    inv = [[None] * n for _ in range(n)]
    rows = tuple(range(n))
    for i in range(n):
        for j in range(n):
            if n == 1:
                cof = se.ONE
            else:
                cof = minor(tuple(r for r in rows if r != j), tuple(c for c in rows if c != i))
            inv[i][j] = se.div(se.mul((-1) ** (i + j), cof), det)
    return inv, det


class ExplicitMap:
    """Map source patch -> target patch given by component expressions in the
    source variables.  The Jacobian ``jac[a][b] = d m^a / d y^b`` is computed
    once at construction."""

    __slots__ = ("source", "target", "components", "jac", "_inv")

    def __init__(self, source: PatchSpec, target: PatchSpec, components):
        comps = [se._e(c) for c in components]
        if len(comps) != target.dim:
            raise ExteriorError("one component per target variable is required")
        extra = set().union(*[se.free_vars(c) for c in comps]) - set(source.varnames)
        if extra:
            raise se.IdentifierError(f"components use unknown variables {sorted(extra)}")
        self.source = source
        self.target = target
        self.components = tuple(comps)
        self.jac = [[se.diff(c, v) for v in source.varnames] for c in comps]
        self._inv = None

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        env = {v: pts[:, i] for i, v in enumerate(self.source.varnames)}
        return np.stack([se.evaluate(c, env) for c in self.components], axis=1)

    def substitution(self):
        return dict(zip(self.target.varnames, self.components))

    def inverse_jacobian(self):
        if self.source.dim != self.target.dim:
            raise DiffeomorphismError("a diffeomorphism needs equal dimensions")
        if self._inv is None:
            self._inv = sym_inverse(self.jac)
        return self._inv

    def jacobian_det(self):
        return self.inverse_jacobian()[1]

    def check_diffeomorphism(self, points):
        det = self.jacobian_det()
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        env = {v: pts[:, i] for i, v in enumerate(self.source.varnames)}
        vals = se.evaluate(det, env)
        bad = np.flatnonzero(~(np.abs(vals) > 0) | ~np.isfinite(vals))
        if bad.size:
            raise DiffeomorphismError(f"singular Jacobian at {pts[bad[0]].tolist()}")

    def compose_after(self, first: "ExplicitMap") -> "ExplicitMap":
        """self o first."""
        if first.target != self.source:
            raise ExteriorError("maps are not composable")
        mapping = dict(zip(self.source.varnames, first.components))
        return ExplicitMap(first.source, self.target, [se.subs(c, mapping) for c in self.components])


def pullback_form(m: ExplicitMap, a):
    if isinstance(a, Spinor):
        return Spinor(m.source, [pullback_form(m, p) for p in a.parts.values()])
    if not isinstance(a, FormField):
        raise ExteriorError("pullback_form needs a form or spinor")
    if a.patch != m.target:
        raise ExteriorError("form does not live on the map's target")
    sub = m.substitution()
    p = a.degree
    out = {}
    for I, c in a.coeffs.items():
        cs = se.subs(c, sub)
        for J in itertools.combinations(range(m.source.dim), p):
            block = [[m.jac[i][j] for j in J] for i in I]
            det = sym_det(block)[0] if p else se.ONE
            if det is se.ZERO:
                continue
            term = se.mul(cs, det)
            out[J] = se.add(out[J], term) if J in out else term
    return FormField(m.source, p, out)


def pullback_bivector(m: ExplicitMap, b: MultivectorField, points=None) -> MultivectorField:
    """J^-1 . b(m(x)) . J^-T, optionally checking det J != 0 at ``points``."""
    if b.degree != 2 or b.patch != m.target:
        raise ExteriorError("pullback_bivector needs a bivector on the map's target")
    if points is not None:
        m.check_diffeomorphism(points)
    inv, _ = m.inverse_jacobian()
    sub = m.substitution()
    n = m.source.dim
    P = {k: se.subs(c, sub) for k, c in b.coeffs.items()}
    out = {}
    for a_, b_ in itertools.combinations(range(n), 2):
        terms = []
        for (c, d), val in P.items():
            terms.append(se.mul(val, se.sub(se.mul(inv[a_][c], inv[b_][d]), se.mul(inv[a_][d], inv[b_][c]))))
        if terms:
            out[(a_, b_)] = se.add(*terms)
    return MultivectorField(m.source, 2, out)


# ---------------------------------------------------------------------------
# spinor -> Poisson bivector

@lru_cache(maxsize=None)
def _complement(n, i, j):
    comp = tuple(k for k in range(n) if k not in (i, j))
    return comp, perm_sign((i, j) + comp)


def spinor_bivector(rho: Spinor) -> MultivectorField:
    """Symbolic bivector of a Poisson-type pure spinor.

    For such a spinor the degree n-2 part is ``c * i_pi vol`` where the top
    part is ``c * vol``, so each coefficient is a ratio of two spinor
    coefficients.
    """
    n = rho.patch.dim
    top = rho.part(n).coeffs.get(tuple(range(n)))
    if top is None:
        raise ExteriorError("spinor has no top-degree part")
    sub = rho.part(n - 2)
    out = {}
    for i, j in itertools.combinations(range(n), 2):
        comp, sign = _complement(n, i, j)
        c = sub.coeffs.get(comp)
        if c is not None:
            out[(i, j)] = se.div(se.mul(sign, c), top)
    return MultivectorField(rho.patch, 2, out)


class SpinorPoissonResult:
    __slots__ = ("ok", "matrices", "witness", "message")

    def __init__(self, ok, matrices, witness=None, message=""):
        self.ok = ok
        self.matrices = matrices
        self.witness = witness
        self.message = message


def spinor_to_poisson(rho: Spinor, points, tol=config.NONZERO_TOL) -> SpinorPoissonResult:
    """Pointwise Poisson bivector of the Dirac structure annihilating ``rho``.

    Where the scalar part is nonzero the spinor is ``c e^omega`` and the
    bivector is ``-W^-1`` (W the matrix of omega).  Elsewhere it is read off
    the top and sub-top parts.  A vanishing top part means the structure is
    not Poisson at that point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = rho.patch.dim
    N = pts.shape[0]
    env = {v: pts[:, i] for i, v in enumerate(rho.patch.varnames)}
    top_c = rho.part(n).coeffs.get(tuple(range(n)))
    top = se.evaluate(top_c, env) if top_c is not None else np.zeros(N)
    s0c = rho.part(0).coeffs.get(())
    s0 = se.evaluate(s0c, env) if s0c is not None else np.zeros(N)
    W = rho.part(2).dense(pts) if n >= 2 else np.zeros((N, n, n))
    sub = rho.part(n - 2)
    subd = {k: se.evaluate(c, env) for k, c in sub.coeffs.items()}
    mats = np.zeros((N, n, n))
    for p in range(N):
        if not abs(top[p]) > tol:
            return SpinorPoissonResult(False, mats[:p], pts[p].tolist(),
                                       "top-degree part vanishes: not a Poisson structure")
        if abs(s0[p]) > tol:
            mats[p] = -np.linalg.inv(W[p] / s0[p])
        else:
            for i, j in itertools.combinations(range(n), 2):
                comp, sign = _complement(n, i, j)
                if comp in subd:
                    v = sign * subd[comp][p] / top[p]
                    mats[p, i, j] = v
                    mats[p, j, i] = -v
    return SpinorPoissonResult(True, mats)


# ---------------------------------------------------------------------------
# JSON

def field_to_json(f: _AltField, extra=None) -> dict:
    keys = list(f.coeffs)
    roots, table, _ = se.dag_encode([f.coeffs[k] for k in keys])
    d = {
        "patch": f.patch.to_json(),
        "degree": f.degree,
        "kind": "multivector" if f.contravariant else "form",
        "nodes": table,
        "entries": [{"indices": [i + 1 for i in k], "expr": r} for k, r in zip(keys, roots)],
    }
    if extra:
        d.update(extra)
    return d


def field_from_json(d) -> _AltField:
    try:
        patch = PatchSpec.from_json(d["patch"])
        kind = d.get("kind", "multivector")
        cls = {"form": FormField, "multivector": MultivectorField}[kind]
        nodes = se.dag_decode(d["nodes"]) if "nodes" in d else None
        coeffs = {}
        for ent in d["entries"]:
            e = ent["expr"]
            expr = nodes[e] if isinstance(e, int) and nodes is not None else se.from_json(e)
            coeffs[tuple(i - 1 for i in ent["indices"])] = expr
        return cls(patch, int(d["degree"]), coeffs)
    except KeyError as exc:
        raise ExteriorError(f"missing field {exc} in serialized field") from None
