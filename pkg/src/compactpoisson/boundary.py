"""Pfaffian boundaries and the extension of symplectic forms to Poisson structures.

A 1-form gamma on a boundary patch N defines the hyperplane field
kappa = ker gamma.  Its class is 2k+1 when gamma ^ (d gamma)^k is the last
nonvanishing power; it is regular when that form vanishes nowhere.  The
kernel h = ker(d gamma restricted to kappa) has rank dim N - 2k - 1.

Given sigma (the restriction of the symplectic form) and gamma, the collar
N x [0, inf) carries omega_0 = sigma + d(t gamma).  Reparametrising t by a
flat taper f and reading the result as a pure spinor,

    e^sigma e^{d(f gamma)} / (f' f^k)  ->  e^sigma ^ dt ^ gamma ^ (d gamma)^k / k!

as t -> 1, produces a Poisson structure that is symplectic for t < 1 and
regular with leaves along h for t >= 1.  A Casimir bump in t then cuts it
off.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import mpmath
import numpy as np

from . import config
from . import exterior as ex
from . import symexpr as se
from . import verify
from .exterior import FormField, MultivectorField, Spinor
from .symexpr import PatchSpec
from .taper import CasimirBump, FlatTaper, make_bump, make_taper

__all__ = [
    "BoundaryError", "PfaffianData", "pfaffian_data", "pfaffian_class", "pfaffian_kernel",
    "kappa_frame", "BoundaryData", "PseudoconvexReport", "check_pseudoconvex",
    "symplectic_extension_form", "DiracInterpolation", "dirac_interpolation",
    "ExtensionResult", "poisson_extension", "spinor_rank", "darboux_form",
    "nonregular_form", "contact_ball_model", "cosymplectic_model", "collar_patch",
]

COLLAR_VAR = "t"


class BoundaryError(ValueError):
    """Failure of a boundary construction; ``stage`` names the pipeline step."""

    def __init__(self, message, stage=None, witness=None):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage
        self.witness = witness


def _pts(grid, patch):
    if grid is None:
        grid = verify.GridSpec(patch.region, count=200)
    return verify._points(grid, patch.dim)


def _env(patch, pts):
    return {v: pts[:, i] for i, v in enumerate(patch.varnames)}


def _form_norm(a: FormField, pts) -> np.ndarray:
    """Largest |coefficient| of a form at each point."""
    out = np.zeros(pts.shape[0])
    env = _env(a.patch, pts)
    with np.errstate(all="ignore"):
        for c in a.coeffs.values():
            out = np.maximum(out, np.abs(se.evaluate(c, env)))
    return out


# ---------------------------------------------------------------------------
# model forms

def darboux_form(m: int, k: int, varnames=None) -> FormField:
    """dx1 + x2 dx3 + ... + x_{2k} dx_{2k+1} on R^m."""
    if 2 * k + 1 > m:
        raise BoundaryError(f"class {2 * k + 1} exceeds dimension {m}")
    names = list(varnames or [f"x{i + 1}" for i in range(m)])
    patch = PatchSpec(names)
    coeffs = {(0,): 1}
    for i in range(1, k + 1):
        coeffs[(2 * i,)] = se.var(names[2 * i - 1])
    return FormField(patch, 1, coeffs)


def nonregular_form(varnames=("x1", "x2", "x3")) -> FormField:
    """dx1 + x2^2 dx3: gamma ^ d gamma = 2 x2 vol vanishes on x2 = 0."""
    patch = PatchSpec(list(varnames))
    return FormField(patch, 1, {(0,): 1, (2,): se.power(se.var(varnames[1]), 2)})


# ---------------------------------------------------------------------------
# Pfaffian class and kernel

def kappa_frame(g: np.ndarray) -> np.ndarray:
    """Basis of ker g for each row of ``g`` (shape (N, m)) -> (N, m, m-1).

    Deterministic completion: pivot on the largest coefficient p and take
    e_j - (g_j / g_p) e_p for j != p.
    """
    g = np.atleast_2d(g)
    N, m = g.shape
    out = np.zeros((N, m, m - 1))
    piv = np.argmax(np.abs(g), axis=1)
    for p in range(N):
        cols = [j for j in range(m) if j != piv[p]]
        for c, j in enumerate(cols):
            out[p, j, c] = 1.0
            out[p, piv[p], c] = -g[p, j] / g[p, piv[p]]
    return out


def _nullspace(A, rtol=config.RANK_RTOL):
    u, s, vt = np.linalg.svd(A)
    thr = rtol * ((s[0] if s.size else 0.0) + 1.0)
    rank = int((s > thr).sum())
    return vt[rank:].T


@dataclass
class PfaffianData:
    gamma: FormField
    dgamma: FormField
    k: int
    regular: bool
    witness: list | None
    powers: list  # gamma ^ (d gamma)^j for j = 0, 1, ...
    points: np.ndarray
    frame: list | None = None  # symbolic frame of h when available

    @property
    def patch(self):
        return self.gamma.patch

    @property
    def dim(self):
        return self.gamma.patch.dim

    @property
    def pfaff_class(self):
        return 2 * self.k + 1

    @property
    def kernel_rank(self):
        return self.dim - 2 * self.k - 1


def _locate_zero(expr, patch, pts, vals):
    """Bisect between the smallest |value| sample and the nearest sample of
    opposite sign; returns a point on the zero set when one is bracketed."""
    p = int(np.argmin(np.abs(vals)))
    opp = np.flatnonzero(np.sign(vals) == -np.sign(vals[p]))
    if vals[p] == 0 or not opp.size:
        return pts[p]
    q = opp[np.argmin(np.linalg.norm(pts[opp] - pts[p], axis=1))]
    a, b = pts[p].copy(), pts[q].copy()
    fa = vals[p]
    names = patch.varnames
    for _ in range(60):
        mid = (a + b) / 2
        fm = se.eval_point(expr, dict(zip(names, mid)))
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return (a + b) / 2


def pfaffian_data(gamma: FormField, grid=None, tol=config.NONZERO_TOL) -> PfaffianData:
    if gamma.degree != 1:
        raise BoundaryError("a Pfaffian distribution is given by a 1-form")
    patch = gamma.patch
    m = patch.dim
    pts = _pts(grid, patch)
    g_norm = _form_norm(gamma, pts)
    if np.any(~(g_norm > tol)):
        bad = pts[int(np.argmin(g_norm))]
        raise BoundaryError(f"gamma vanishes at {bad.tolist()}", stage="class", witness=bad.tolist())
    dg = ex.exterior_d(gamma)
    powers = [gamma]
    cur = gamma
    while cur.degree + 2 <= m:
        nxt = ex.wedge(cur, dg)
        if nxt.is_structurally_zero():
            break
        powers.append(nxt)
        cur = nxt
    norms = [_form_norm(p, pts) for p in powers]
    k = max(j for j, nv in enumerate(norms) if np.any(nv > tol))
    top = powers[k]
    regular = bool(np.all(norms[k] > tol))
    witness = None
    if top.degree == m and len(top.coeffs) == 1:
        # a scalar density: a sign change also reveals a zero between samples
        c = next(iter(top.coeffs.values()))
        vals = se.evaluate(c, _env(patch, pts))
        if not regular or (np.any(vals > 0) and np.any(vals < 0)):
            regular = False
            witness = _locate_zero(c, patch, pts, vals).tolist()
    elif not regular:
        witness = pts[int(np.argmin(norms[k]))].tolist()
    pd = PfaffianData(gamma, dg, k, regular, witness, powers, pts)
    pd.frame = _symbolic_frame(pd)
    return pd


def pfaffian_class(gamma: FormField, grid=None):
    """(k, regular, witness): class 2k+1, regularity on the samples and a
    point where gamma ^ (d gamma)^k vanishes (None when regular)."""
    pd = pfaffian_data(gamma, grid)
    return pd.k, pd.regular, pd.witness


def _symbolic_frame(pd: PfaffianData):
    """Coordinate fields d_j with gamma_j = 0 and i_{d_j} d gamma = 0."""
    m = pd.dim
    cols = []
    for j in range(m):
        if (j,) in pd.gamma.coeffs:
            continue
        if any(j in key for key in pd.dgamma.coeffs):
            continue
        cols.append(j)
    if len(cols) != pd.kernel_rank:
        return None
    return [ex.vector_field(pd.patch, {(j,): 1}) for j in cols]


def _kernel_at(g, W, d):
    K = kappa_frame(g[None, :])[0]
    A = np.vstack([g[None, :], K.T @ W])
    ns = _nullspace(A)
    return ns


def pfaffian_kernel(pd: PfaffianData, points=None, check_involutive=True):
    """Frame of h.  Returns a dict with ``symbolic`` (list of vector fields
    or None), ``frames`` (N, m, r) numeric bases at the points and the
    involutivity residual."""
    if not pd.regular:
        raise BoundaryError("kernel needs a regular Pfaffian distribution", stage="kernel",
                            witness=pd.witness)
    pts = pd.points if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    m, r = pd.dim, pd.kernel_rank
    G = pd.gamma.dense(pts)
    W = pd.dgamma.dense(pts)
    frames = np.zeros((pts.shape[0], m, r))
    for p in range(pts.shape[0]):
        ns = _kernel_at(G[p], W[p], r)
        if ns.shape[1] != r:
            raise BoundaryError(f"kernel rank {ns.shape[1]} != {r} at {pts[p].tolist()}",
                                stage="kernel", witness=pts[p].tolist())
        frames[p] = ns
    result = {"symbolic": pd.frame, "frames": frames, "rank": r, "involutivity": 0.0}
    if check_involutive and r >= 2 and pd.frame is None:
        result["involutivity"] = _involutivity(pd, pts[: min(20, len(pts))])
    return result


def _involutivity(pd, pts, h=1e-5):
    """Largest normal component of brackets of the projected frame fields
    h_a = P e_{j_a} (P the orthogonal projector onto h), by central differences."""
    m, r = pd.dim, pd.kernel_rank

    def proj(x):
        G = pd.gamma.dense(x[None, :])[0]
        W = pd.dgamma.dense(x[None, :])[0]
        ns = _kernel_at(G, W, r)
        return ns @ ns.T

    P0 = proj(pts[0])
    # axes with the largest projections, chosen once
    axes = list(np.argsort(-np.diag(P0))[:r])
    worst = 0.0
    for x in pts:
        P = proj(x)
        fields = [P[:, j] for j in axes]
        jac = []
        for j in axes:
            D = np.zeros((m, m))
            for l in range(m):
                e = np.zeros(m)
                e[l] = h
                D[:, l] = (proj(x + e)[:, j] - proj(x - e)[:, j]) / (2 * h)
            jac.append(D)
        for a, b in itertools.combinations(range(r), 2):
            br = jac[b] @ fields[a] - jac[a] @ fields[b]
            worst = max(worst, float(np.linalg.norm(br - P @ br)))
    return worst


# ---------------------------------------------------------------------------
# boundary data

def _lift(a: FormField, patch: PatchSpec) -> FormField:
    """Same coefficients on a patch whose leading variables are a's."""
    return FormField(patch, a.degree, dict(a.coeffs))


def _hodge_vector(a: FormField) -> MultivectorField:
    """The vector field R with i_R vol = a for an (m-1)-form a."""
    m = a.patch.dim
    out = {}
    for i in range(m):
        comp = tuple(j for j in range(m) if j != i)
        c = a.coeffs.get(comp)
        if c is not None:
            out[(i,)] = se.mul((-1) ** i, c)
    return MultivectorField(a.patch, 1, out)


def _pairing(g: FormField, X: MultivectorField):
    terms = [se.mul(c, X.coeffs[k]) for k, c in g.coeffs.items() if k in X.coeffs]
    return se.add(*terms) if terms else se.ZERO


class BoundaryData:
    """sigma, gamma and an optional complex structure J0 on kappa.

    ``J0`` is a callable returning (N, m, m) matrices acting on tangent
    vectors of the boundary patch (only their action on kappa matters), or
    a constant m x m matrix.
    """

    def __init__(self, sigma: FormField, gamma: FormField, J0=None, name="boundary"):
        if sigma.degree != 2 or gamma.degree != 1:
            raise BoundaryError("sigma must be a 2-form and gamma a 1-form")
        if sigma.patch != gamma.patch:
            raise BoundaryError("sigma and gamma live on different patches")
        m = gamma.patch.dim
        if m % 2 == 0:
            raise BoundaryError("the boundary of a symplectic manifold is odd-dimensional")
        if COLLAR_VAR in gamma.patch.varnames:
            raise BoundaryError(f"the name {COLLAR_VAR!r} is reserved for the collar coordinate")
        self.sigma = sigma
        self.gamma = gamma
        self.name = name
        self.n = (m + 1) // 2
        if J0 is not None and not callable(J0):
            mat = np.asarray(J0, dtype=float)
            if mat.shape != (m, m):
                raise BoundaryError(f"J0 must be {m}x{m}")
            self._J0_matrix = mat
            J0 = lambda pts, mat=mat: np.broadcast_to(mat, (np.atleast_2d(pts).shape[0], m, m))
        else:
            self._J0_matrix = None
        self.J0 = J0
        self.dgamma = ex.exterior_d(gamma)
        # R spans ker sigma, normalised by gamma(R) = 1; it fixes the splitting
        # T*N = kappa* + <gamma> in which sigma has no gamma component
        Rt = _hodge_vector(ex.wedge_power(sigma, self.n - 1))
        self.reeb = Rt.scale(se.div(1, _pairing(gamma, Rt)))
        self.beta = -ex.interior(self.reeb, self.dgamma)
        self.alpha = self.dgamma - ex.wedge(self.beta, gamma)

    @property
    def patch(self):
        return self.gamma.patch

    def reconstruction_residual(self, points) -> float:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        with np.errstate(all="ignore"):
            diff = (self.alpha + ex.wedge(self.beta, self.gamma) - self.dgamma).dense(pts)
        return float(np.nanmax(np.abs(diff))) if diff.size else 0.0

    def to_json(self, points=None):
        d = {"name": self.name, "patch": self.patch.to_json(),
             "sigma": ex.field_to_json(self.sigma), "gamma": ex.field_to_json(self.gamma)}
        if self._J0_matrix is not None:
            d["J0"] = {"constant": self._J0_matrix.tolist()}
        elif self.J0 is not None and points is not None:
            pts = np.atleast_2d(np.asarray(points, dtype=float))
            d["J0"] = {"points": pts.tolist(), "matrices": np.asarray(self.J0(pts)).tolist()}
        return d

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        for key in ("sigma", "gamma"):
            if key not in d:
                raise BoundaryError(f"boundary JSON lacks field {key!r}")
        sigma = ex.field_from_json(d["sigma"])
        gamma = ex.field_from_json(d["gamma"])
        if "patch" in d:
            patch = PatchSpec.from_json(d["patch"])
            sigma, gamma = sigma.with_patch(patch), gamma.with_patch(patch)
        J0 = None
        j = d.get("J0")
        if j is not None:
            if "constant" in j:
                J0 = j["constant"]
            else:
                J0 = _sampled_J0(np.asarray(j["points"], float), np.asarray(j["matrices"], float))
        return cls(sigma, gamma, J0, d.get("name", "boundary"))


def _sampled_J0(points, mats):
    def J0(pts):
        pts = np.atleast_2d(pts)
        idx = [int(np.argmin(np.linalg.norm(points - p, axis=1))) for p in pts]
        if any(np.linalg.norm(points[i] - p) > 1e-12 for i, p in zip(idx, pts)):
            raise BoundaryError("J0 was requested away from its sample points")
        return mats[idx]
    J0.points = points
    return J0


# ---------------------------------------------------------------------------
# pseudoconvexity

def _directions(dim, count):
    """Deterministic unit directions: a circle for dim 2, a Fibonacci sphere for 3."""
    if dim == 1:
        return np.array([[1.0]])
    if dim == 2:
        a = np.pi * np.arange(count) / count
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if dim == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5 ** 0.5) * i
        rr = np.sqrt(1 - z ** 2)
        return np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)
    return verify.random_directions(dim, count)


@dataclass
class PseudoconvexReport:
    a: bool
    b: bool
    c: object  # True, False or "not checked"
    k: int
    witness: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.a and self.b and self.c is True

    @property
    def status(self):
        # a failed check with a particular J0 does not refute pseudoconvexity
        return "certified" if self.passed else "not certified"

    def to_json(self):
        c = self.c if isinstance(self.c, str) else bool(self.c)
        return {"a_regular_pfaffian": bool(self.a), "b_volume": bool(self.b), "c_taming": c,
                "k": int(self.k), "class": 2 * int(self.k) + 1, "status": self.status,
                "witness": verify._jsonable(self.witness),
                "worst": {k: verify._fmt(v) for k, v in self.worst.items()}}


def volume_condition_form(bd: BoundaryData, k: int) -> FormField:
    """sigma^{n-k-1} ^ (d gamma)^k ^ gamma."""
    return ex.wedge(ex.wedge(ex.wedge_power(bd.sigma, bd.n - k - 1), ex.wedge_power(bd.dgamma, k)), bd.gamma)


def check_pseudoconvex(bd: BoundaryData, grid=None, directions=config.TAMING_DIRECTIONS,
                       margin=config.POSITIVITY_MARGIN) -> PseudoconvexReport:
    pts = _pts(grid, bd.patch)
    pd = pfaffian_data(bd.gamma, pts)
    witness, worst = {}, {}
    a = pd.regular
    if not a:
        witness["a"] = pd.witness
    vol = volume_condition_form(bd, pd.k) if bd.n - pd.k - 1 >= 0 else FormField(bd.patch, bd.patch.dim)
    vnorm = _form_norm(vol, pts)
    b = bool(np.all(vnorm > config.NONZERO_TOL))
    worst["b_min_volume"] = float(vnorm.min())
    if not b:
        witness["b"] = pts[int(np.argmin(vnorm))].tolist()
    if bd.J0 is None:
        return PseudoconvexReport(a, b, "not checked", pd.k, witness, worst)
    m = bd.patch.dim
    G = bd.gamma.dense(pts)
    S = bd.sigma.dense(pts)
    D = bd.dgamma.dense(pts)
    J = np.asarray(bd.J0(pts))
    dirs = _directions(m - 1, directions)
    c = True
    tame_min, levi_min, cx_err = np.inf, np.inf, 0.0
    for p in range(pts.shape[0]):
        Q, _ = np.linalg.qr(kappa_frame(G[p][None, :])[0])
        V = Q @ dirs.T  # (m, count)
        JV = J[p] @ V
        # J0 must preserve kappa and square to -1 there
        cx_err = max(cx_err, float(np.abs(G[p] @ JV).max()), float(np.abs(J[p] @ JV + V).max()))
        tame = np.einsum("ic,ij,jc->c", V, S[p], JV)
        levi = np.einsum("ic,ij,jc->c", V, D[p], JV)
        if tame.min() < tame_min:
            tame_min = float(tame.min())
        if levi.min() < levi_min:
            levi_min = float(levi.min())
        if c is True and (tame.min() <= margin or levi.min() < -config.NONZERO_TOL):
            c = False
            witness["c"] = pts[p].tolist()
    if cx_err > 1e-8:
        c = False
        witness.setdefault("c", pts[0].tolist())
    worst.update({"c_min_taming": tame_min, "c_min_levi": levi_min, "c_complex_structure": cx_err})
    return PseudoconvexReport(a, b, c, pd.k, witness, worst)


# ---------------------------------------------------------------------------
# collar forms

def collar_patch(bd_patch: PatchSpec, t0=-0.1) -> PatchSpec:
    reg = bd_patch.region
    if reg["kind"] == "box":
        bounds = [tuple(b) for b in reg["bounds"]]
    else:
        r = float(reg.get("radius", reg.get("r2", 1.0)))
        bounds = [(-r, r)] * bd_patch.dim
    return PatchSpec(list(bd_patch.varnames) + [COLLAR_VAR],
                     {"kind": "collar", "bounds": bounds, "t0": t0, "boundary": verify._jsonable(reg)},
                     collar_var=COLLAR_VAR)


def collar_points(bd_patch, count, t_range, seed=config.DEFAULT_SEED):
    """Boundary samples paired with collar heights drawn uniformly from t_range."""
    base = verify.GridSpec(bd_patch.region, count=count, seed=seed).points(bd_patch.dim)
    rng = np.random.default_rng(seed + 1)
    t = t_range[0] + (t_range[1] - t_range[0]) * rng.random(count)
    return np.column_stack([base, t])


@dataclass
class ExtensionFormReport:
    passed: bool
    worst_identity: float
    min_top: float
    witness: list | None

    def to_json(self):
        return {"pass": bool(self.passed), "identity_residual": verify._fmt(self.worst_identity),
                "min_top_power": verify._fmt(self.min_top),
                "witness": None if self.witness is None else [verify._fmt(x) for x in self.witness]}


def symplectic_extension_form(bd: BoundaryData, t_max=config.T_MAX, grid=None, count=400):
    """omega_0 = sigma + dt ^ gamma + t d gamma on the collar, with a check
    that its top power equals -n (sigma + t alpha)^{n-1} ^ gamma ^ dt and
    vanishes nowhere for t in [0, t_max]."""
    cp = collar_patch(bd.patch)
    m = bd.patch.dim
    n = bd.n
    t = se.var(COLLAR_VAR)
    dt = FormField(cp, 1, {(m,): 1})
    sig, gam, dg = _lift(bd.sigma, cp), _lift(bd.gamma, cp), _lift(bd.dgamma, cp)
    omega0 = sig + ex.wedge(dt, gam) + dg.scale(t)
    top = ex.wedge_power(omega0, n)
    A = sig + _lift(bd.alpha, cp).scale(t)
    crit = ex.wedge(ex.wedge(ex.wedge_power(A, n - 1), gam), dt).scale(-n)
    if grid is None:
        base = _pts(None, bd.patch)[: max(count // 20, 1)]
        ts = np.linspace(0.0, t_max, 20)
        pts = np.array([np.append(b, tv) for b in base for tv in ts])
    else:
        pts = verify._points(grid, cp.dim)
    key = tuple(range(cp.dim))
    env = _env(cp, pts)
    with np.errstate(all="ignore"):
        tv = se.evaluate(top.coeffs.get(key, se.ZERO), env)
        cv = se.evaluate(crit.coeffs.get(key, se.ZERO), env)
    ident = float(np.nanmax(np.abs(tv - cv) / (1 + np.abs(tv)))) if tv.size else 0.0
    mag = np.abs(tv)
    passed = bool(np.all(mag > config.NONZERO_TOL)) and ident <= 1e-9
    witness = None if passed else pts[int(np.argmin(mag))].tolist()
    return omega0, ExtensionFormReport(passed, ident, float(mag.min()), witness)


# ---------------------------------------------------------------------------
# Dirac interpolation

@dataclass
class DiracInterpolation:
    patch: PatchSpec
    k: int
    raw: Spinor
    normalized: Spinor
    limit: Spinor
    scalar: se.Expr  # 1/(f' f^k), the degree-0 part of the normalised spinor
    taper: FlatTaper


def _collar_gamma(pd_or_bd, cp):
    return _lift(pd_or_bd.gamma, cp), _lift(ex.exterior_d(pd_or_bd.gamma), cp)


def dirac_interpolation(pd: PfaffianData, taper: FlatTaper | None = None) -> DiracInterpolation:
    """The spinor e^{d(f gamma)}, its f' f^k normalisation and the limit
    (1/k!) dt ^ gamma ^ (d gamma)^k.

    Expanded as 1 + sum_j f^j/j! ((1/(j+1)) f dgamma + f' dt ^ gamma) ^ dgamma^j
    for j = 0..k; after dividing by f' f^k each coefficient is one of the
    flat gadgets f^p f'^q and the t >= 1 extension is exact.
    """
    if not pd.regular:
        raise BoundaryError("Dirac interpolation needs a regular Pfaffian distribution",
                            stage="interpolation", witness=pd.witness)
    taper = taper or make_taper("double")
    if taper.var != COLLAR_VAR:
        raise BoundaryError(f"the taper variable must be {COLLAR_VAR!r}")
    k = pd.k
    cp = collar_patch(pd.patch)
    m = pd.dim
    gam, dg = _collar_gamma(pd, cp)
    dt = FormField(cp, 1, {(m,): 1})
    dtg = ex.wedge(dt, gam)
    one = FormField(cp, 0, {(): 1})
    f, fp = taper.f, taper.fprime
    raw_terms = [one]
    norm_terms = [FormField(cp, 0, {(): taper.gadget(-k, -1)})]
    dg_pow = one
    for j in range(k + 1):
        fact = Fraction(1, math.factorial(j))
        # raw: f^j/j! ((1/(j+1)) f dg + f' dt^gamma) ^ dg^j
        inner_raw = dg.scale(se.mul(Fraction(1, j + 1), f)) + dtg.scale(fp)
        raw_terms.append(ex.wedge(inner_raw, dg_pow).scale(se.mul(fact, se.power(f, j))))
        # normalised: f^{j-k}/j! ((1/(j+1)) (f/f') dg + dt^gamma) ^ dg^j
        inner = dg.scale(se.mul(Fraction(1, j + 1), taper.gadget(1, -1))) + dtg
        norm_terms.append(ex.wedge(inner, dg_pow).scale(se.mul(fact, taper.gadget(j - k, 0))))
        dg_pow = ex.wedge(dg_pow, dg)
    limit = ex.wedge(dtg, ex.wedge_power(dg, k)).scale(Fraction(1, math.factorial(k)))
    return DiracInterpolation(cp, k, Spinor(cp, raw_terms), Spinor(cp, norm_terms),
                              Spinor(cp, [limit]), taper.gadget(-k, -1), taper)


def spinor_distance(a: Spinor, b: Spinor, points) -> float:
    """Largest coefficient-wise difference of two spinors at the points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for d in range(a.patch.dim + 1):
        pa, pb = a.part(d), b.part(d)
        for key in set(pa.coeffs) | set(pb.coeffs):
            env = _env(a.patch, pts)
            with np.errstate(all="ignore"):
                va = se.evaluate(pa.coeffs.get(key, se.ZERO), env)
                vb = se.evaluate(pb.coeffs.get(key, se.ZERO), env)
            diff = np.abs(va - vb)
            worst = max(worst, float(np.max(np.where(np.isnan(diff), np.inf, diff))))
    return worst


def spinor_rank(rho: Spinor, points, prec=53) -> np.ndarray:
    """Rank of the Poisson structure of a Poisson-type spinor at each point:
    dim minus the lowest degree with a nonzero part.

    Coefficients are evaluated in mpmath, whose exponent range is unbounded,
    so flat but nonzero factors (1/f' near t = 1) still count as nonzero.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = rho.patch.dim
    names = rho.patch.varnames
    out = np.zeros(pts.shape[0], dtype=int)
    degrees = sorted(rho.parts)
    for p in range(pts.shape[0]):
        env = {v: pts[p:p + 1, i] for i, v in enumerate(names)}
        pt = {v: mpmath.mpf(float(pts[p, i])) for i, v in enumerate(names)}
        low = None
        for d in degrees:
            for c in rho.parts[d].coeffs.values():
                if se.structural_zero_mask(c, env)[0]:
                    continue
                if se.evaluate_mp(c, pt, prec) != 0:
                    low = d
                    break
            if low is not None:
                break
        out[p] = 0 if low is None else n - low
    return out


# ---------------------------------------------------------------------------
# Poisson extension

@dataclass
class ExtensionResult:
    field: MultivectorField
    omega0: FormField
    spinor: Spinor  # e^sigma ^ normalised interpolation spinor
    interpolation: DiracInterpolation
    pseudoconvex: PseudoconvexReport
    certificate: dict | None = None

    def to_json(self):
        return {"pseudoconvex": self.pseudoconvex.to_json(),
                "certificate": verify._jsonable(self.certificate)}


def poisson_extension(bd: BoundaryData, taper: FlatTaper | None = None, bump: CasimirBump | None = None,
                      grid=None, certify=True, samples=20_000, seed=config.DEFAULT_SEED) -> ExtensionResult:
    """Compactly supported Poisson structure on the collar extending omega_0^-1.

    The bivector is read off the spinor e^{sigma + d(f gamma)}: for t < 1/2
    from the raw exponential, beyond from the f' f^k normalised generator,
    which stays finite up to and past t = 1.  Both are generators of the same
    line there, so the two readings agree.  The Casimir bump g(t) then makes
    the structure vanish for t >= 2.
    """
    taper = taper or make_taper("double")
    bump = bump or make_bump(1, 2, COLLAR_VAR)
    pc = check_pseudoconvex(bd, grid)
    if not pc.passed:
        raise BoundaryError(f"boundary is {pc.status}: {pc.to_json()}", stage="pseudoconvex",
                            witness=next(iter(pc.witness.values()), None))
    omega0, ext_rep = symplectic_extension_form(bd, grid=None)
    if not ext_rep.passed:
        raise BoundaryError("omega_0 degenerates", stage="extension_form", witness=ext_rep.witness)
    pd = pfaffian_data(bd.gamma, _pts(grid, bd.patch))
    interp = dirac_interpolation(pd, taper)
    cp = interp.patch
    sig = _lift(bd.sigma, cp)
    gam, dg = _collar_gamma(bd, cp)
    m = bd.patch.dim
    dt = FormField(cp, 1, {(m,): 1})
    # pullback of omega_0 by Id x f
    omega_f = sig + ex.wedge(dt, gam).scale(taper.fprime) + dg.scale(taper.f)
    pi_raw = ex.spinor_bivector(ex.exp_form(omega_f))
    rho = ex.wedge(ex.exp_form(sig), interp.normalized)
    pi_norm = ex.spinor_bivector(rho)
    t = se.var(COLLAR_VAR)
    g = bump.at(t).expr
    out = {}
    for key in sorted(set(pi_raw.coeffs) | set(pi_norm.coeffs)):
        c = se.piecewise(t, Fraction(1, 2), pi_raw[key], pi_norm[key])
        out[key] = se.mul(g, c)
    fld = MultivectorField(cp, 2, out)
    res = ExtensionResult(fld, omega0, rho, interp, pc)
    if certify:
        res.certificate = extension_certificate(res, bd, samples=samples, seed=seed, ext_report=ext_rep)
    return res


def _expected_leaf_rank(bd, k):
    return 2 * (bd.n - k - 1)


def extension_certificate(res: ExtensionResult, bd: BoundaryData, samples=20_000,
                          seed=config.DEFAULT_SEED, ext_report=None, rank_samples=60) -> dict:
    """Stage-by-stage certificate of a Poisson extension."""
    fld = res.field
    cp = fld.patch
    k = res.interpolation.k
    delta = float(res.interpolation.taper.delta)
    dim = cp.dim
    stages = {}
    # full rank for t < 1, leaf rank on [1, 2), zero beyond
    bands = {"t<1": ((-0.1, 0.999), dim), "1<=t<2": ((1.0, 1.999), _expected_leaf_rank(bd, k)),
             "t>=2": ((2.0, 3.0), 0)}
    profile = {}
    for label, ((lo, hi), want) in bands.items():
        t0 = time.perf_counter()
        pts = collar_points(bd.patch, rank_samples, (lo, hi), seed)
        if label == "t>=2":
            rep = verify.support_check(fld, pts, name="zero_beyond_2")
            ranks = np.zeros(len(pts), dtype=int) if rep.passed else np.full(len(pts), -1)
        else:
            ranks = spinor_rank(res.spinor, pts)
            # the bump is positive on [0, 2), so it does not change the rank
        bad = np.flatnonzero(ranks != want)
        profile[label] = sorted({int(r) for r in ranks})
        stages[f"rank {label}"] = verify.VerificationReport(
            f"rank {label}", not bad.size, float(len(bad)), pts[bad[0]].tolist() if bad.size else None,
            time.perf_counter() - t0, {"expected": want, "observed": profile[label]})
    # double-precision cross-check of the rank away from the flat zone
    for label, (lo, hi), want in (("svd t<0.5", (-0.1, 0.5), dim),
                                  ("svd 1<=t<2", (1.0, 1.9), _expected_leaf_rank(bd, k))):
        pts = collar_points(bd.patch, rank_samples, (lo, hi), seed + 7)
        rm = verify.rank_map(fld, pts)
        stages[label] = verify.VerificationReport(label, set(rm.histogram) == {want}, 0.0, None, 0.0,
                                                  {"histogram": rm.to_json()["histogram"]})
    # leaves along h on [1, 2): pi(gamma) = pi(dt) = 0
    t0 = time.perf_counter()
    pts = collar_points(bd.patch, 200, (1.0, 1.999), seed + 2)
    P = fld.dense(pts)
    G = _lift(bd.gamma, cp).dense(pts)
    leak = np.maximum(np.abs(np.einsum("pi,pij->pj", G, P)).max(axis=1), np.abs(P[:, dim - 1, :]).max(axis=1))
    w, wv = verify._pick_witness(pts, leak)
    stages["leaves"] = verify.VerificationReport("leaves", wv <= 1e-10, wv, None if wv <= 1e-10 else w,
                                                 time.perf_counter() - t0, {"points": len(pts)})
    # Jacobi identity over the whole collar
    pts = collar_points(bd.patch, samples, (-0.1, 2.5), seed + 3)
    stages["jacobi"] = verify.jacobi_residual(fld, pts, symbolic=False)
    # germ: equals -W^-1 with W the matrix of omega_0 for t <= delta
    t0 = time.perf_counter()
    pts = collar_points(bd.patch, 500, (-0.1, delta), seed + 4)
    W = res.omega0.dense(pts)
    target = -np.linalg.inv(W)
    err = np.abs(fld.dense(pts) - target).reshape(len(pts), -1).max(axis=1)
    w, wv = verify._pick_witness(pts, err)
    stages["germ"] = verify.VerificationReport("germ", wv <= 1e-10, wv, None if wv <= 1e-10 else w,
                                               time.perf_counter() - t0, {"t_max": delta})
    # relative agreement with the inverse of the pulled-back form up to t = 0.99
    stages["pullback_inverse"] = _pullback_inverse_check(res, bd, seed + 5)
    if ext_report is not None:
        stages["extension_form"] = verify.VerificationReport(
            "extension_form", ext_report.passed, ext_report.worst_identity, ext_report.witness, 0.0,
            {"min_top_power": ext_report.min_top})
    passed = all(r.passed for r in stages.values())
    return {"pass": bool(passed), "k": k, "rank_profile": profile,
            "stages": {name: r.to_json() for name, r in sorted(stages.items())}}


def _pullback_inverse_check(res, bd, seed, count=60, prec=80):
    """|pi W + 1| in mpmath with W the matrix of the pulled-back form
    omega_f = sigma + f' dt ^ gamma + f d gamma, for t in [0, 0.99]."""
    t0 = time.perf_counter()
    cp = res.field.patch
    taper = res.interpolation.taper
    m = bd.patch.dim
    sig = _lift(bd.sigma, cp)
    gam, dg = _collar_gamma(bd, cp)
    dt = FormField(cp, 1, {(m,): 1})
    omega_f = sig + ex.wedge(dt, gam).scale(taper.fprime) + dg.scale(taper.f)
    pts = collar_points(bd.patch, count, (0.0, 0.99), seed)
    names = cp.varnames
    n = cp.dim
    worst, witness = 0.0, None
    g = res.field
    for p in pts:
        pt = {v: mpmath.mpf(float(x)) for v, x in zip(names, p)}
        # f and f' are exponentials of exponents near e^{1/(1-t)}; rounding the
        # exponent costs its magnitude in relative error, so carry those bits too
        size = max(abs(float(se.evaluate_mp(taper.log_fprime, pt, 53))),
                   abs(float(se.evaluate_mp(taper.log_f, pt, 53))), 1.0)
        work = prec + int(np.ceil(np.log2(size)))
        with mpmath.workprec(work):
            W = mpmath.zeros(n, n)
            for (i, j), c in omega_f.coeffs.items():
                v = se.evaluate_mp(c, pt, work)
                W[i, j], W[j, i] = v, -v
            out = mpmath.zeros(n, n)
            for (i, j), c in g.coeffs.items():
                v = se.evaluate_mp(c, pt, work)
                out[i, j], out[j, i] = v, -v
            # pi = -W^-1  <=>  pi W = -1; entries of W span hundreds of orders
            # of magnitude, so the product is checked instead of an inverse
            err = mpmath.mnorm(out * W + mpmath.eye(n), 1)
        if float(err) > worst:
            worst, witness = float(err), p.tolist()
    ok = worst <= 1e-9
    return verify.VerificationReport("pullback_inverse", ok, worst, None if ok else witness,
                                     time.perf_counter() - t0, {"points": count, "t_max": 0.99})


# ---------------------------------------------------------------------------
# boundary models

def contact_ball_model() -> BoundaryData:
    """Upper hemisphere of the unit sphere in C^2 as a graph over (x1, y1, x2).

    omega = dx1^dy1 + dx2^dy2, X = r/2 d_r (so L_X omega = omega) and
    gamma = i_X omega restricted, the standard contact form.  J0 is the
    complex structure of C^2 read in the chart.
    """
    names = ["x1", "y1", "x2"]
    chart = PatchSpec(names, {"kind": "ball", "radius": 0.8})
    amb = PatchSpec(["x1", "y1", "x2", "y2"])
    x1, y1, x2 = chart.vars()
    y2 = se.sqrt(se.sub(1, se.add(se.power(x1, 2), se.power(y1, 2), se.power(x2, 2))))
    emb = ex.ExplicitMap(chart, amb, [x1, y1, x2, y2])
    X1, Y1, X2, Y2 = amb.vars()
    omega = FormField(amb, 2, {(0, 1): 1, (2, 3): 1})
    half = Fraction(1, 2)
    lam = FormField(amb, 1, {(0,): se.mul(-half, Y1), (1,): se.mul(half, X1),
                             (2,): se.mul(-half, Y2), (3,): se.mul(half, X2)})
    sigma = ex.pullback_form(emb, omega)
    gamma = ex.pullback_form(emb, lam)
    Jstd = np.zeros((4, 4))
    Jstd[1, 0], Jstd[0, 1], Jstd[3, 2], Jstd[2, 3] = 1, -1, 1, -1

    def J0(pts):
        pts = np.atleast_2d(pts)
        env = _env(chart, pts)
        D = np.zeros((pts.shape[0], 4, 3))
        for a in range(4):
            for b in range(3):
                D[:, a, b] = se.evaluate(emb.jac[a][b], env)
        # push forward, rotate in C^2, read back the chart coordinates
        return np.einsum("ij,pjk->pik", Jstd, D)[:, :3, :]

    return BoundaryData(sigma, gamma, J0, name="contact-ball")


def cosymplectic_model() -> BoundaryData:
    """Boundary {s = 1} of [0,1] x S^1 x T^2 with omega = ds^dtheta + dtheta1^dtheta2
    and X = d_s: gamma = dtheta, sigma = dtheta1^dtheta2; J0 rotates (d_theta1, d_theta2)."""
    names = ["theta", "theta1", "theta2"]
    two_pi = 2 * math.pi
    patch = PatchSpec(names, {"kind": "box", "bounds": [(0.0, two_pi)] * 3})
    sigma = FormField(patch, 2, {(1, 2): 1})
    gamma = FormField(patch, 1, {(0,): 1})
    J = np.zeros((3, 3))
    J[2, 1], J[1, 2] = 1.0, -1.0
    return BoundaryData(sigma, gamma, J, name="cosymplectic")
