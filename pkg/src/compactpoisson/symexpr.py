"""Scalar expression trees with exact differentiation and flat gadgets.

Nodes are hash-consed: two structurally identical expressions are the same
Python object, so ``a is b`` is structural equality and shared subtrees are
evaluated once per call.

Node kinds
----------
const, var, add, mul, div, pow, exp, log, sqrt,
flatexp1 (``exp(1/(1-u))`` for u < 1), flatexp2 (``exp(exp(1/(1-u)))``),
pw (piecewise: ``left`` where ``arg < b``, ``right`` where ``arg >= b``).

Numerical conventions
---------------------
A product with an exact zero factor evaluates to zero even when another
factor overflowed to ``inf``; likewise ``0 / x`` is zero.  Both are the
limits that occur at flat gadgets, where a super-exponentially small factor
multiplies a merely exponentially large one.
"""

from __future__ import annotations

import math
import weakref
from fractions import Fraction
from numbers import Rational

import mpmath
import numpy as np

from . import config

__all__ = [
    "Expr", "SymbolicError", "IdentifierError", "EvaluationError",
    "const", "var", "add", "mul", "sub", "neg", "div", "power", "exp", "log",
    "sqrt", "flatexp1", "flatexp2", "piecewise", "smooth_step",
    "diff", "subs", "free_vars", "evaluate", "eval_point", "evaluate_mp",
    "to_poly", "from_poly", "is_zero", "structurally_zero_at", "resolve",
    "value_range", "structural_zero_mask", "est_flat_order", "flat_order_report", "to_json",
    "from_json", "count_nodes", "ZERO", "ONE",
]


class SymbolicError(Exception):
    pass


class IdentifierError(SymbolicError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EvaluationError(SymbolicError, ArithmeticError):
    def __init__(self, message, path=()):
        super().__init__(f"{message} at node path {'/'.join(path) or '<root>'}")
        self.path = tuple(path)


_UNARY = ("exp", "log", "sqrt", "flatexp1", "flatexp2")
_INTERN: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """Immutable, interned expression node.  Build with the module functions."""

    __slots__ = ("kind", "args", "data", "_fv", "_diff", "_poly", "__weakref__")

    def __new__(cls, kind, args=(), data=None):
        key = (kind, tuple(id(a) for a in args), data)
        node = _INTERN.get(key)
        if node is not None:
            return node
        node = object.__new__(cls)
        node.kind = kind
        node.args = tuple(args)
        node.data = data
        node._fv = None
        node._diff = {}
        node._poly = None
        _INTERN[key] = node
        return node

    def __setattr__(self, name, value):
        if name in ("kind", "args", "data") and hasattr(self, name):
            raise AttributeError("Expr nodes are immutable")
        object.__setattr__(self, name, value)

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)

    def __repr__(self):
        return f"Expr({to_string(self)})"

    def __str__(self):
        return to_string(self)

    @property
    def is_const(self):
        return self.kind == "const"

    @property
    def value(self) -> Fraction:
        if self.kind != "const":
            raise SymbolicError("not a constant")
        return self.data

    def __reduce__(self):
        return (from_json, (to_json(self),))


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, Rational)):
        return Fraction(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise SymbolicError(f"non-finite constant {v}")
        return Fraction(repr(v))
    if isinstance(v, str):
        return Fraction(v)
    raise TypeError(f"cannot make a rational constant from {v!r}")


def _e(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, str):
        return var(v)
    return const(v)


def const(v) -> Expr:
    return Expr("const", (), _frac(v))


def var(name: str) -> Expr:
    if not isinstance(name, str) or not name:
        raise IdentifierError(f"invalid variable name {name!r}")
    return Expr("var", (), name)


ZERO = const(0)
ONE = const(1)


def add(*terms) -> Expr:
    flat = []
    c = Fraction(0)
    for t in terms:
        t = _e(t)
        parts = t.args if t.kind == "add" else (t,)
        for p in parts:
            if p.kind == "const":
                c += p.data
            else:
                flat.append(p)
    if c != 0:
        flat.append(const(c))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Expr("add", flat)


def mul(*factors) -> Expr:
    flat = []
    c = Fraction(1)
    for f in factors:
        f = _e(f)
        parts = f.args if f.kind == "mul" else (f,)
        for p in parts:
            if p.kind == "const":
                c *= p.data
            else:
                flat.append(p)
    if c == 0:
        return ZERO
    if c != 1:
        flat.insert(0, const(c))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Expr("mul", flat)


def neg(a) -> Expr:
    return mul(-1, a)


def sub(a, b) -> Expr:
    return add(a, neg(b))


def div(a, b) -> Expr:
    a, b = _e(a), _e(b)
    if b.kind == "const":
        if b.data == 0:
            raise ZeroDivisionError("division by the constant 0")
        return mul(1 / b.data, a)
    if a.kind == "const" and a.data == 0:
        return ZERO
    if a is b:
        return ONE
    return Expr("div", (a, b))


def power(a, n: int) -> Expr:
    a = _e(a)
    if isinstance(n, Fraction):
        if n.denominator != 1:
            raise SymbolicError("only integer powers are supported; use sqrt")
        n = int(n)
    if not isinstance(n, int):
        raise SymbolicError("only integer powers are supported; use sqrt")
    if n == 0:
        return ONE
    if n == 1:
        return a
    if a.kind == "const":
        if a.data == 0 and n < 0:
            raise ZeroDivisionError("0 to a negative power")
        return const(a.data ** n)
    if a.kind == "pow":
        return power(a.args[0], a.data * n)
    return Expr("pow", (a,), n)


def exp(a) -> Expr:
    a = _e(a)
    if a.kind == "const" and a.data == 0:
        return ONE
    if a.kind == "log":
        return a.args[0]
    return Expr("exp", (a,))


def log(a) -> Expr:
    a = _e(a)
    if a.kind == "const":
        if a.data <= 0:
            raise EvaluationError("log of a nonpositive constant")
        if a.data == 1:
            return ZERO
    if a.kind == "exp":
        return a.args[0]
    return Expr("log", (a,))


def _rational_sqrt(q: Fraction):
    if q < 0:
        return None
    n, d = q.numerator, q.denominator
    rn, rd = math.isqrt(n), math.isqrt(d)
    if rn * rn == n and rd * rd == d:
        return Fraction(rn, rd)
    return None


def sqrt(a) -> Expr:
    a = _e(a)
    if a.kind == "const":
        if a.data < 0:
            raise EvaluationError("sqrt of a negative constant")
        r = _rational_sqrt(a.data)
        if r is not None:
            return const(r)
    return Expr("sqrt", (a,))


def flatexp1(u) -> Expr:
    """``exp(1/(1-u))``, defined for u < 1."""
    return Expr("flatexp1", (_e(u),))


def flatexp2(u) -> Expr:
    """``exp(exp(1/(1-u)))``, defined for u < 1."""
    return Expr("flatexp2", (_e(u),))


def piecewise(arg, b, left, right) -> Expr:
    """``left`` where ``arg < b`` and ``right`` where ``arg >= b``.

    The caller promises that all one-sided derivatives of the two branches
    agree at the breakpoint.
    """
    arg, left, right = _e(arg), _e(left), _e(right)
    b = _frac(b)
    if left is right:
        return left
    if arg.kind == "const":
        return left if arg.data < b else right
    return Expr("pw", (arg, left, right), b)


def smooth_step(u) -> Expr:
    """Flat step: 0 for u <= 0, 1 for u >= 1, ``h(u)/(h(u)+h(1-u))`` between,
    with ``h(u) = exp(-1/u)``."""
    u = _e(u)
    if u.kind == "const" and not 0 < u.data < 1:
        return ZERO if u.data <= 0 else ONE
    hu = exp(neg(div(1, u)))
    hv = exp(neg(div(1, sub(1, u))))
    mid = div(hu, add(hu, hv))
    return piecewise(u, 0, ZERO, piecewise(u, 1, mid, ONE))


# ---------------------------------------------------------------------------
# structural queries

def free_vars(e: Expr) -> frozenset:
    if e._fv is None:
        if e.kind == "var":
            e._fv = frozenset((e.data,))
        elif e.kind == "const":
            e._fv = frozenset()
        else:
            s = frozenset()
            for a in e.args:
                s |= free_vars(a)
            e._fv = s
    return e._fv


def count_nodes(e: Expr) -> int:
    seen = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        stack.extend(n.args)
    return len(seen)


def diff(e, v, patch=None) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``v``."""
    e = _e(e)
    name = v.data if isinstance(v, Expr) else v
    if patch is not None and name not in patch.varnames:
        raise IdentifierError(f"unknown variable {name!r} for patch {patch.varnames}")
    return _diff(e, name)


def _diff(e: Expr, v: str) -> Expr:
    if v not in free_vars(e):
        return ZERO
    cached = e._diff.get(v)
    if cached is not None:
        return cached
    k = e.kind
    if k == "var":
        r = ONE
    elif k == "add":
        r = add(*[_diff(a, v) for a in e.args])
    elif k == "mul":
        terms = []
        for i, a in enumerate(e.args):
            da = _diff(a, v)
            if da is ZERO:
                continue
            terms.append(mul(*e.args[:i], da, *e.args[i + 1:]))
        r = add(*terms)
    elif k == "div":
        a, b = e.args
        r = sub(div(_diff(a, v), b), div(mul(a, _diff(b, v)), power(b, 2)))
    elif k == "pow":
        a = e.args[0]
        r = mul(e.data, power(a, e.data - 1), _diff(a, v))
    elif k == "exp":
        r = mul(e, _diff(e.args[0], v))
    elif k == "log":
        r = div(_diff(e.args[0], v), e.args[0])
    elif k == "sqrt":
        r = div(_diff(e.args[0], v), mul(2, e))
    elif k == "flatexp1":
        u = e.args[0]
        r = mul(e, _diff(u, v), power(sub(1, u), -2))
    elif k == "flatexp2":
        u = e.args[0]
        r = mul(e, flatexp1(u), _diff(u, v), power(sub(1, u), -2))
    elif k == "pw":
        arg, left, right = e.args
        r = piecewise(arg, e.data, _diff(left, v), _diff(right, v))
    else:  # pragma: no cover
        raise SymbolicError(f"unknown node kind {k}")
    e._diff[v] = r
    return r


_BUILDERS = {
    "add": lambda e, a: add(*a),
    "mul": lambda e, a: mul(*a),
    "div": lambda e, a: div(*a),
    "pow": lambda e, a: power(a[0], e.data),
    "exp": lambda e, a: exp(a[0]),
    "log": lambda e, a: log(a[0]),
    "sqrt": lambda e, a: sqrt(a[0]),
    "flatexp1": lambda e, a: flatexp1(a[0]),
    "flatexp2": lambda e, a: flatexp2(a[0]),
    "pw": lambda e, a: piecewise(a[0], e.data, a[1], a[2]),
}


def _rebuild(e: Expr, args) -> Expr:
    if all(x is y for x, y in zip(args, e.args)):
        return e
    return _BUILDERS[e.kind](e, args)


def subs(e, mapping: dict) -> Expr:
    """Substitute variables by expressions (simultaneously)."""
    e = _e(e)
    mapping = {(k.data if isinstance(k, Expr) else k): _e(v) for k, v in mapping.items()}
    keys = frozenset(mapping)
    memo = {}

    def go(n):
        r = memo.get(id(n))
        if r is not None:
            return r
        if not (free_vars(n) & keys):
            r = n
        elif n.kind == "var":
            r = mapping[n.data]
        else:
            r = _rebuild(n, [go(a) for a in n.args])
        memo[id(n)] = r
        return r

    return go(e)


# ---------------------------------------------------------------------------
# numeric evaluation (numpy, vectorised over points)

def _as_env(env, n=None):
    arrs = {}
    for k, v in env.items():
        a = np.asarray(v, dtype=float)
        arrs[k] = a.reshape(-1) if a.ndim else a
    if n is None:
        sizes = {a.size for a in arrs.values() if a.ndim}
        n = max(sizes) if sizes else 1
    out = {}
    for k, a in arrs.items():
        out[k] = np.broadcast_to(a, (n,)).astype(float, copy=False) if a.ndim == 0 or a.size != n else a
    return out, n


def evaluate(e, env: dict, strict: bool = False) -> np.ndarray:
    """Evaluate on arrays of variable values; returns a 1-D float array."""
    e = _e(e)
    env, n = _as_env(env)
    missing = free_vars(e) - set(env)
    if missing:
        raise IdentifierError(f"no value for variables {sorted(missing)}")
    with np.errstate(all="ignore"):
        r = _ev(e, env, {}, n, strict, ())
    return np.array(np.broadcast_to(r, (n,)), dtype=float)


def eval_point(e, point) -> float:
    """Evaluate at a single point (dict name -> value); domain errors raise."""
    return float(evaluate(e, {k: np.array([v], dtype=float) for k, v in point.items()}, strict=True)[0])


def _check(ok, strict, msg, path):
    if strict and not np.all(ok):
        raise EvaluationError(msg, path)


def _ev(e, env, memo, n, strict, path):
    r = memo.get(id(e))
    if r is not None:
        return r
    k = e.kind
    if k == "const":
        r = float(e.data)
    elif k == "var":
        r = env[e.data]
    elif k == "add":
        r = 0.0
        for i, a in enumerate(e.args):
            r = r + _ev(a, env, memo, n, strict, path + (f"add[{i}]",))
    elif k == "mul":
        r = 1.0
        zero = None
        for i, a in enumerate(e.args):
            x = _ev(a, env, memo, n, strict, path + (f"mul[{i}]",))
            r = r * x
            z = np.equal(x, 0.0)
            zero = z if zero is None else (zero | z)
        if np.any(zero):
            r = np.where(zero, 0.0, r)
    elif k == "div":
        a = _ev(e.args[0], env, memo, n, strict, path + ("div[0]",))
        b = _ev(e.args[1], env, memo, n, strict, path + ("div[1]",))
        az = np.equal(a, 0.0)
        _check(~np.equal(b, 0.0) | az, strict, "division by zero", path)
        r = a / b
        if np.any(az):
            r = np.where(az, 0.0, r)
    elif k == "pow":
        a = _ev(e.args[0], env, memo, n, strict, path + ("pow",))
        if e.data < 0:
            _check(~np.equal(a, 0.0), strict, "zero to a negative power", path)
            r = 1.0 / np.power(a, -e.data)
        else:
            r = np.power(a, e.data)
    elif k == "exp":
        r = np.exp(_ev(e.args[0], env, memo, n, strict, path + ("exp",)))
    elif k == "log":
        a = _ev(e.args[0], env, memo, n, strict, path + ("log",))
        _check(np.greater(a, 0.0), strict, "log of a nonpositive value", path)
        r = np.log(a)
    elif k == "sqrt":
        a = _ev(e.args[0], env, memo, n, strict, path + ("sqrt",))
        _check(np.greater_equal(a, 0.0), strict, "sqrt of a negative value", path)
        r = np.sqrt(a)
    elif k in ("flatexp1", "flatexp2"):
        u = _ev(e.args[0], env, memo, n, strict, path + (k,))
        _check(np.less(u, 1.0), strict, f"{k} argument >= 1", path)
        inner = np.where(np.less(u, 1.0), 1.0 / (1.0 - u), np.nan)
        r = np.exp(inner) if k == "flatexp1" else np.exp(np.exp(inner))
    elif k == "pw":
        r = _ev_pw(e, env, memo, n, strict, path)
    else:  # pragma: no cover
        raise SymbolicError(f"unknown node kind {k}")
    memo[id(e)] = r
    return r


def _ev_pw(e, env, memo, n, strict, path):
    arg, left, right = e.args
    a = np.broadcast_to(_ev(arg, env, memo, n, strict, path + ("pw.arg",)), (n,))
    mask = a < float(e.data)
    if mask.all():
        return _ev(left, env, memo, n, strict, path + ("pw.left",))
    if not mask.any():
        return _ev(right, env, memo, n, strict, path + ("pw.right",))
    out = np.empty(n)
    for sel, child, tag in ((mask, left, "pw.left"), (~mask, right, "pw.right")):
        sub_env = {k: v[sel] for k, v in env.items()}
        m = int(sel.sum())
        out[sel] = np.broadcast_to(_ev(child, sub_env, {}, m, strict, path + (tag,)), (m,))
    return out


# ---------------------------------------------------------------------------
# extended-range scalar evaluation (mpmath): exponents never overflow

def evaluate_mp(e, point: dict, prec: int = 53):
    """Evaluate at one point in mpmath; returns an ``mpf``.

    Unlike float64, flat factors such as ``exp(-exp(100))`` stay nonzero,
    which is what rank certification near flat loci needs.
    """
    e = _e(e)
    with mpmath.workprec(prec):
        pt = {k: mpmath.mpf(v) if not isinstance(v, mpmath.mpf) else v for k, v in point.items()}
        return _evmp(e, pt, {})


def _evmp(e, pt, memo):
    r = memo.get(id(e))
    if r is not None:
        return r
    k = e.kind
    mp = mpmath
    if k == "const":
        r = mp.mpf(e.data.numerator) / e.data.denominator
    elif k == "var":
        r = pt[e.data]
    elif k == "add":
        r = mp.fsum(_evmp(a, pt, memo) for a in e.args)
    elif k == "mul":
        vals = [_evmp(a, pt, memo) for a in e.args]
        if any(v == 0 for v in vals):
            r = mp.mpf(0)
        else:
            r = mp.fprod(vals)
    elif k == "div":
        a = _evmp(e.args[0], pt, memo)
        b = _evmp(e.args[1], pt, memo) if a != 0 else None
        # a / 0 only occurs on the boundary of a flat branch; match the float path
        r = mp.mpf(0) if a == 0 else (a / b if b != 0 else mp.inf * mp.sign(a))
    elif k == "pow":
        r = _evmp(e.args[0], pt, memo) ** e.data
    elif k == "exp":
        r = mp.exp(_evmp(e.args[0], pt, memo))
    elif k == "log":
        r = mp.log(_evmp(e.args[0], pt, memo))
    elif k == "sqrt":
        r = mp.sqrt(_evmp(e.args[0], pt, memo))
    elif k == "flatexp1":
        r = mp.exp(1 / (1 - _evmp(e.args[0], pt, memo)))
    elif k == "flatexp2":
        r = mp.exp(mp.exp(1 / (1 - _evmp(e.args[0], pt, memo))))
    elif k == "pw":
        a = _evmp(e.args[0], pt, memo)
        child = e.args[1] if a < mp.mpf(e.data.numerator) / e.data.denominator else e.args[2]
        r = _evmp(child, pt, memo)
    else:  # pragma: no cover
        raise SymbolicError(k)
    memo[id(e)] = r
    return r


# ---------------------------------------------------------------------------
# polynomial normal form: exact zero tests

def to_poly(e, varnames=None):
    """Sparse polynomial ``{exponent tuple: Fraction}`` or None if ``e`` is not
    a polynomial.  Exponents follow ``varnames`` (default: sorted free vars)."""
    e = _e(e)
    if varnames is None:
        varnames = tuple(sorted(free_vars(e)))
    varnames = tuple(varnames)
    if not free_vars(e) <= set(varnames):
        return None
    idx = {v: i for i, v in enumerate(varnames)}
    nv = len(varnames)
    memo = {}

    def pmul(p, q):
        out = {}
        for ea, ca in p.items():
            for eb, cb in q.items():
                ex = tuple(x + y for x, y in zip(ea, eb))
                out[ex] = out.get(ex, 0) + ca * cb
        return {k: v for k, v in out.items() if v != 0}

    def go(n):
        if id(n) in memo:
            return memo[id(n)]
        k = n.kind
        if k == "const":
            r = {(0,) * nv: n.data} if n.data != 0 else {}
        elif k == "var":
            ex = [0] * nv
            ex[idx[n.data]] = 1
            r = {tuple(ex): Fraction(1)}
        elif k == "add":
            r = {}
            for a in n.args:
                pa = go(a)
                if pa is None:
                    r = None
                    break
                for ex, c in pa.items():
                    r[ex] = r.get(ex, 0) + c
            if r is not None:
                r = {k2: v for k2, v in r.items() if v != 0}
        elif k == "mul":
            r = {(0,) * nv: Fraction(1)}
            for a in n.args:
                pa = go(a)
                if pa is None:
                    r = None
                    break
                r = pmul(r, pa)
        elif k == "pow" and n.data > 0:
            base = go(n.args[0])
            if base is None:
                r = None
            else:
                r = {(0,) * nv: Fraction(1)}
                for _ in range(n.data):
                    r = pmul(r, base)
        else:
            r = None
        memo[id(n)] = r
        return r

    return go(e)


def from_poly(poly: dict, varnames) -> Expr:
    terms = []
    for ex, c in sorted(poly.items()):
        factors = [const(c)]
        for v, p in zip(varnames, ex):
            if p:
                factors.append(power(var(v), p))
        terms.append(mul(*factors))
    return add(*terms)


def is_zero(e) -> bool:
    """True only when ``e`` is provably the zero function (structural or
    polynomial identity); False means 'not proven zero'."""
    e = _e(e)
    if e is ZERO:
        return True
    p = to_poly(e)
    if p is not None:
        return not p
    return not _atom_poly(e, {})


def _atom_poly(e, memo):
    """``e`` as a polynomial whose indeterminates are its variables and its
    maximal non-polynomial subtrees (interned, so equal subtrees coincide).
    Monomials are sorted tuples of (atom key, exponent)."""
    got = memo.get(id(e))
    if got is not None:
        return got
    k = e.kind
    if k == "const":
        out = {(): e.data} if e.data != 0 else {}
    elif k == "add":
        out = {}
        for a in e.args:
            for m, c in _atom_poly(a, memo).items():
                out[m] = out.get(m, 0) + c
        out = {m: c for m, c in out.items() if c != 0}
    elif k == "mul" or (k == "pow" and isinstance(e.data, int) and e.data >= 0):
        factors = e.args if k == "mul" else (e.args[0],) * e.data
        out = {(): Fraction(1)}
        for a in factors:
            pa = _atom_poly(a, memo)
            nxt = {}
            for m1, c1 in out.items():
                for m2, c2 in pa.items():
                    exps = dict(m1)
                    for key, n in m2:
                        exps[key] = exps.get(key, 0) + n
                    m = tuple(sorted(exps.items()))
                    nxt[m] = nxt.get(m, 0) + c1 * c2
            out = {m: c for m, c in nxt.items() if c != 0}
    else:
        key = e.data if k == "var" else f"#{id(e)}"
        out = {((key, 1),): Fraction(1)}
    memo[id(e)] = out
    return out


# ---------------------------------------------------------------------------
# branch structure

def structurally_zero_at(e, point: dict) -> bool:
    """Follow the branches selected at ``point``; True iff the selected
    expression is identically zero by structure (not by magnitude)."""
    e = _e(e)
    env = {k: np.array([float(v)]) for k, v in point.items()}
    memo = {}

    def argval(a):
        with np.errstate(all="ignore"):
            return float(np.broadcast_to(_ev(a, env, {}, 1, False, ()), (1,))[0])

    def go(n):
        if id(n) in memo:
            return memo[id(n)]
        k = n.kind
        if k == "const":
            r = n.data == 0
        elif k == "mul":
            r = any(go(a) for a in n.args)
        elif k == "add":
            r = all(go(a) for a in n.args)
        elif k == "div":
            r = go(n.args[0])
        elif k == "pow":
            r = n.data > 0 and go(n.args[0])
        elif k == "sqrt":
            r = go(n.args[0])
        elif k == "pw":
            r = go(n.args[1] if argval(n.args[0]) < float(n.data) else n.args[2])
        else:
            r = False
        memo[id(n)] = r
        return r

    return go(e)


def structural_zero_mask(e, env: dict) -> np.ndarray:
    """Vectorised :func:`structurally_zero_at` over arrays of points."""
    e = _e(e)
    env, n = _as_env(env)

    def go(node, env, n, memo):
        r = memo.get(id(node))
        if r is not None:
            return r
        k = node.kind
        if k == "const":
            r = np.full(n, node.data == 0)
        elif k == "mul":
            r = np.zeros(n, dtype=bool)
            for a in node.args:
                r = r | go(a, env, n, memo)
        elif k == "add":
            r = np.ones(n, dtype=bool)
            for a in node.args:
                r = r & go(a, env, n, memo)
                if not r.any():
                    break
        elif k in ("div", "sqrt"):
            r = go(node.args[0], env, n, memo)
        elif k == "pow":
            r = go(node.args[0], env, n, memo) if node.data > 0 else np.zeros(n, dtype=bool)
        elif k == "pw":
            with np.errstate(all="ignore"):
                a = np.broadcast_to(_ev(node.args[0], env, {}, n, False, ()), (n,))
            mask = a < float(node.data)
            r = np.empty(n, dtype=bool)
            for sel, child in ((mask, node.args[1]), (~mask, node.args[2])):
                if sel.any():
                    sub_env = {kk: v[sel] for kk, v in env.items()}
                    r[sel] = go(child, sub_env, int(sel.sum()), {})
        else:
            r = np.zeros(n, dtype=bool)
        memo[id(node)] = r
        return r

    return go(e, env, n, {})


def value_range(e, box: dict, ball=None, open_region=False):
    """Interval enclosure of ``e`` over the box ``{var: (lo, hi)}``.

    ``ball=(varnames, radius)`` sharpens sums of squares of those variables
    to the exact range ``[0, radius**2]``.  Returns None when no finite
    enclosure is available.  With ``open_region`` the upper ends of the
    ranges are not attained, which decides piecewise nodes whose breakpoint
    equals the upper end.
    """
    e = _e(e)
    memo = {}

    def sq_ball(n):
        if ball is None:
            return None
        names, rad = ball
        p = to_poly(n, tuple(names))
        if p is None:
            return None
        nv = len(names)
        const_part = p.get((0,) * nv, Fraction(0))
        quad = {k: v for k, v in p.items() if k != (0,) * nv}
        coefs = set()
        for ex, c in quad.items():
            if sorted(ex) != [0] * (nv - 1) + [2]:
                return None
            coefs.add(c)
        if len(quad) != nv or len(coefs) != 1:
            return None
        c = float(coefs.pop())
        lo, hi = float(const_part), float(const_part) + c * rad * rad
        return (min(lo, hi), max(lo, hi))

    def go(n):
        if id(n) in memo:
            return memo[id(n)]
        r = sq_ball(n) if n.kind in ("add", "mul", "pow") else None
        if r is None:
            r = _interval(n, go, box, open_region)
        memo[id(n)] = r
        return r

    return go(e)


def _interval(n, go, box, open_region=False):
    k = n.kind
    if k == "const":
        v = float(n.data)
        return (v, v)
    if k == "var":
        return tuple(map(float, box[n.data])) if n.data in box else None
    rs = [go(a) for a in n.args]
    if any(r is None for r in rs):
        if k == "pw":
            pass
        else:
            return None
    if k == "add":
        return (sum(r[0] for r in rs), sum(r[1] for r in rs))
    if k == "mul":
        lo, hi = 1.0, 1.0
        for a, b in rs:
            c = [lo * a, lo * b, hi * a, hi * b]
            lo, hi = min(c), max(c)
        return (lo, hi)
    if k == "div":
        (a, b), (c, d) = rs
        if c <= 0 <= d:
            return None
        q = [a / c, a / d, b / c, b / d]
        return (min(q), max(q))
    if k == "pow":
        a, b = rs[0]
        p = n.data
        if p < 0 and a <= 0 <= b:
            return None
        vals = [a ** p, b ** p]
        if p % 2 == 0 and a <= 0 <= b:
            vals.append(0.0)
        return (min(vals), max(vals))
    if k == "exp":
        a, b = rs[0]
        return (math.exp(min(a, 700)), math.exp(min(b, 700)) if b < 700 else math.inf)
    if k == "log":
        a, b = rs[0]
        return None if a <= 0 else (math.log(a), math.log(b))
    if k == "sqrt":
        a, b = rs[0]
        return None if a < 0 else (math.sqrt(a), math.sqrt(b))
    if k == "pw":
        ar = rs[0]
        if ar is not None:
            if ar[1] < float(n.data) or (open_region and ar[1] == float(n.data)):
                return rs[1]
            if ar[0] >= float(n.data):
                return rs[2]
        if rs[1] is None or rs[2] is None:
            return None
        return (min(rs[1][0], rs[2][0]), max(rs[1][1], rs[2][1]))
    return None


def resolve(e, box: dict, ball=None, open_region=False) -> Expr:
    """Replace every piecewise node whose branch is fixed over the region by
    that branch.  The result equals ``e`` on the region, branch for branch."""
    e = _e(e)
    memo = {}

    def go(n):
        if id(n) in memo:
            return memo[id(n)]
        if n.kind == "pw":
            ar = value_range(n.args[0], box, ball, open_region)
            b = float(n.data)
            if ar is not None and (ar[1] < b or (open_region and ar[1] == b)):
                r = go(n.args[1])
            elif ar is not None and ar[0] >= b:
                r = go(n.args[2])
            else:
                r = piecewise(n.args[0], n.data, go(n.args[1]), go(n.args[2]))
        elif n.args:
            r = _rebuild(n, [go(a) for a in n.args])
        else:
            r = n
        memo[id(n)] = r
        return r

    return go(e)


# ---------------------------------------------------------------------------
# flat-order estimation

def _central_weights(order: int):
    """Second-order accurate central difference weights for d^order/dx^order."""
    p = (order + 1) // 2
    offs = list(range(-p, p + 1))
    m = len(offs)
    # Vandermonde solve in exact arithmetic
    A = [[Fraction(o) ** i for o in offs] for i in range(m)]
    rhs = [Fraction(math.factorial(order)) if i == order else Fraction(0) for i in range(m)]
    # gaussian elimination
    M = [row[:] + [rhs[i]] for i, row in enumerate(A)]
    for c in range(m):
        piv = next(r for r in range(c, m) if M[r][c] != 0)
        M[c], M[piv] = M[piv], M[c]
        for r in range(m):
            if r != c and M[r][c] != 0:
                f = M[r][c] / M[c][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
    w = [M[i][m] / M[i][i] for i in range(m)]
    return np.array(offs, dtype=float), np.array([float(x) for x in w])


class FlatOrderReport:
    """``order``: vanishing order reached; ``worst``: largest extrapolated
    |derivative| among the orders that passed."""

    __slots__ = ("order", "converged", "estimates", "kmax", "worst")

    def __init__(self, order, converged, estimates, kmax, worst=0.0):
        self.order = order
        self.converged = converged
        self.estimates = estimates
        self.kmax = kmax
        self.worst = worst

    def __repr__(self):
        return f"FlatOrderReport(order={self.order}, converged={self.converged})"


def flat_order_report(fn, b: float, kmax: int, h_seq=None, tol=None) -> FlatOrderReport:
    """Estimate the vanishing order of the callable ``fn`` (array -> array) at ``b``.

    Order ``k`` means the value and derivatives of orders ``1..k-1`` vanish,
    each judged by Richardson extrapolation of central differences over the
    two finest steps.
    """
    if kmax > config.FLAT_KMAX:
        raise ValueError(f"kmax must be <= {config.FLAT_KMAX}")
    h_seq = sorted(h_seq or config.FLAT_STEPS, reverse=True)
    tol = config.TAU_FLAT if tol is None else tol
    estimates = {}
    v0 = float(np.asarray(fn(np.array([b], dtype=float))).reshape(-1)[0])
    estimates[0] = [v0]
    if not abs(v0) <= tol:
        return FlatOrderReport(0, math.isfinite(v0), estimates, kmax)
    converged = True
    worst = abs(v0)
    for j in range(1, kmax):
        offs, w = _central_weights(j)
        ds = []
        for h in h_seq:
            vals = np.asarray(fn(b + offs * h), dtype=float)
            ds.append(float(np.dot(w, vals)) / h ** j)
        estimates[j] = ds
        h1, h2 = h_seq[-2], h_seq[-1]
        d1, d2 = ds[-2], ds[-1]
        rich = (h1 ** 2 * d2 - h2 ** 2 * d1) / (h1 ** 2 - h2 ** 2)
        if not math.isfinite(rich):
            converged = False
            return FlatOrderReport(j, converged, estimates, kmax, worst)
        if abs(rich) > tol:
            return FlatOrderReport(j, converged, estimates, kmax, worst)
        worst = max(worst, abs(rich))
    return FlatOrderReport(kmax, converged, estimates, kmax, worst)


def est_flat_order(e, v, b, kmax: int, h_seq=None, env=None, tol=None) -> int:
    """Order of vanishing of expression ``e`` in variable ``v`` at ``v = b``;
    other variables are held at the values in ``env``."""
    e = _e(e)
    name = v.data if isinstance(v, Expr) else v
    env = dict(env or {})
    others = free_vars(e) - {name} - set(env)
    if others:
        raise IdentifierError(f"no values for {sorted(others)}")

    def fn(ts):
        ts = np.asarray(ts, dtype=float)
        full = {k: np.full(ts.shape, float(x)) for k, x in env.items()}
        full[name] = ts
        return evaluate(e, full)

    return flat_order_report(fn, float(b), kmax, h_seq, tol).order


# ---------------------------------------------------------------------------
# serialisation: DAG table, one node per shared subexpression

def _node_json(n, index):
    k = n.kind
    d = {"op": k}
    if k == "const":
        d["value"] = str(n.data)
    elif k == "var":
        d["name"] = n.data
    elif k == "pow":
        d["exp"] = n.data
    elif k == "pw":
        d["b"] = str(n.data)
    if n.args:
        d["args"] = [index[id(a)] for a in n.args]
    return d


def dag_encode(roots, table=None, index=None):
    """Append the nodes of ``roots`` to ``table``; return their indices."""
    table = [] if table is None else table
    index = {} if index is None else index
    out = []
    for root in roots:
        stack = [(root, False)]
        while stack:
            n, ready = stack.pop()
            if id(n) in index:
                continue
            if ready or not n.args:
                index[id(n)] = len(table)
                table.append(_node_json(n, index))
            else:
                stack.append((n, True))
                for a in reversed(n.args):
                    if id(a) not in index:
                        stack.append((a, False))
        out.append(index[id(root)])
    return out, table, index


def dag_decode(table):
    nodes = []
    for d in table:
        op = d["op"]
        args = [nodes[i] for i in d.get("args", ())]
        if op == "const":
            n = const(Fraction(d["value"]))
        elif op == "var":
            n = var(d["name"])
        elif op == "add":
            n = Expr("add", args) if len(args) > 1 else add(*args)
        elif op == "mul":
            n = Expr("mul", args) if len(args) > 1 else mul(*args)
        elif op == "div":
            n = Expr("div", args)
        elif op == "pow":
            n = Expr("pow", args, int(d["exp"]))
        elif op in _UNARY:
            n = Expr(op, args)
        elif op == "pw":
            n = Expr("pw", args, Fraction(d["b"]))
        else:
            raise SymbolicError(f"unknown node kind {op!r}")
        nodes.append(n)
    return nodes


def to_json(e) -> dict:
    """Lossless JSON form ``{"nodes": [...], "root": i}``."""
    (root,), table, _ = dag_encode([_e(e)])
    return {"nodes": table, "root": root}


def from_json(obj) -> Expr:
    """Inverse of :func:`to_json`; also accepts nested trees
    ``{"op": ..., "args": [subtree, ...]}``."""
    if "nodes" in obj:
        return dag_decode(obj["nodes"])[obj["root"]]
    table = []

    def flatten(t):
        d = {k: v for k, v in t.items() if k != "args"}
        if "args" in t:
            d["args"] = [flatten(a) for a in t["args"]]
        table.append(d)
        return len(table) - 1

    root = flatten(obj)
    return dag_decode(table)[root]


# ---------------------------------------------------------------------------

def to_string(e: Expr) -> str:
    k = e.kind
    if k == "const":
        return str(e.data)
    if k == "var":
        return e.data
    if k == "add":
        return "(" + " + ".join(to_string(a) for a in e.args) + ")"
    if k == "mul":
        return "*".join(to_string(a) for a in e.args)
    if k == "div":
        return f"({to_string(e.args[0])})/({to_string(e.args[1])})"
    if k == "pow":
        return f"{to_string(e.args[0])}^{e.data}"
    if k == "pw":
        a, l, r = e.args
        return f"pw({to_string(a)} < {e.data} ? {to_string(l)} : {to_string(r)})"
    return f"{k}({to_string(e.args[0])})"


# ---------------------------------------------------------------------------
# coordinate patches

_REGION_KINDS = ("box", "ball", "annulus", "simplex", "collar")


class PatchSpec:
    """Coordinate patch: variable names plus a region.

    ``region`` is a dict with key ``kind`` and:

    * box: ``bounds`` list of (lo, hi) per axis
    * ball: ``radius`` (and optional ``center``)
    * annulus: ``r1``, ``r2``
    * simplex: nothing (the standard pyramid simplex of the patch dimension)
    * collar: ``bounds`` for the non-collar axes and ``t0`` for the collar
      axis, whose upper end is unbounded
    """

    __slots__ = ("varnames", "region", "collar_var")

    def __init__(self, varnames, region=None, collar_var=None):
        varnames = tuple(varnames)
        if not varnames:
            raise IdentifierError("a patch needs at least one variable")
        for v in varnames:
            if not isinstance(v, str) or not v.isidentifier():
                raise IdentifierError(f"invalid variable name {v!r}")
        if len(set(varnames)) != len(varnames):
            raise IdentifierError(f"duplicate variable names in {varnames}")
        if collar_var is not None and collar_var not in varnames:
            raise IdentifierError(f"collar variable {collar_var!r} is not a patch variable")
        region = dict(region or {"kind": "box", "bounds": [(-1.0, 1.0)] * len(varnames)})
        kind = region.get("kind")
        if kind not in _REGION_KINDS:
            raise SymbolicError(f"unknown region kind {kind!r}")
        if kind == "collar" and collar_var is None:
            raise SymbolicError("collar region needs a collar variable")
        for key in ("radius", "r1", "r2", "t0"):
            if key in region and not math.isfinite(float(region[key])):
                raise SymbolicError(f"region bound {key} must be finite")
        for lo, hi in region.get("bounds", ()):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise SymbolicError(f"bad interval ({lo}, {hi})")
        object.__setattr__(self, "varnames", varnames)
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "collar_var", collar_var)

    def __setattr__(self, name, value):
        raise AttributeError("PatchSpec is immutable")

    @property
    def dim(self):
        return len(self.varnames)

    def vars(self):
        return [var(v) for v in self.varnames]

    def __eq__(self, other):
        return isinstance(other, PatchSpec) and self.varnames == other.varnames

    def __hash__(self):
        return hash(self.varnames)

    def __repr__(self):
        return f"PatchSpec({self.varnames}, {self.region['kind']})"

    def to_json(self):
        reg = {k: (list(map(list, v)) if k == "bounds" else v) for k, v in self.region.items()}
        d = {"varnames": list(self.varnames), "region": reg}
        if self.collar_var:
            d["collar_var"] = self.collar_var
        return d

    @classmethod
    def from_json(cls, d):
        reg = dict(d.get("region") or {})
        if "bounds" in reg:
            reg["bounds"] = [tuple(map(float, b)) for b in reg["bounds"]]
        return cls(d["varnames"], reg or None, d.get("collar_var"))


__all__ += ["PatchSpec"]
