"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line with its measured figures.  Run the
file directly (``python3 tests/test_acceptance.py``) for the summary alone.
"""

import time

import numpy as np
import pytest

from compactpoisson import boundary as bd
from compactpoisson import constructors as cons
from compactpoisson import exterior as ex
from compactpoisson import gallery
from compactpoisson import patchwork as pw_mod
from compactpoisson import symexpr as se
from compactpoisson import verify
from compactpoisson.exterior import FormField, MultivectorField
from compactpoisson.taper import TaperError, make_taper

SEED = 20240601
BALL_SEEDS = ["constant-r2", "rank2-r4", "so3", "heisenberg", "affine", "quadratic"]


def report(number, title, ok, budget, elapsed, detail):
    limit = f"{budget}s" if isinstance(budget, (int, float)) else budget
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail} ({elapsed:.1f}s, budget {limit})"
    print(line)
    return line


@pytest.fixture
def show(capsys):
    def emit(*args):
        with capsys.disabled():
            print()
            report(*args)
    return emit


# 1 --------------------------------------------------------------------------

def ball_soundness():
    single = make_taper("single", 0.1)
    rows, ok, slowest = [], True, 0.0
    for name in BALL_SEEDS:
        t0 = time.perf_counter()
        p = cons.seeds()[name]
        bs = cons.ball_support(p, single)
        n = p.patch.dim
        germ = verify.germ_compare(bs.field, p.pi, {"kind": "ball", "radius": 0.5})
        outside = verify.GridSpec({"kind": "annulus", "r1": 1.0, "r2": 1.5}, count=2000, seed=SEED + 1).points(n)
        sup = verify.support_check(bs.field, outside)
        jac = verify.jacobi_residual(bs.field, verify.GridSpec({"kind": "ball", "radius": 1.2}, count=10_000,
                                                               seed=SEED))
        flat = verify.flat_profile(bs.field, verify.random_directions(n, 20, SEED + 2), radius=1.0, kmax=5)
        dt = time.perf_counter() - t0
        slowest = max(slowest, dt)
        good = (germ.passed and germ.details.get("path") == "symbolic" and sup.passed
                and jac.passed and jac.worst <= 1e-8 and flat.passed and dt < 60)
        ok &= good
        rows.append(f"{name} jac={jac.worst:.1e}{'' if good else ' FAIL'}")
    return ok, "; ".join(rows) + f"; slowest seed {slowest:.1f}s"


def test_1_ball_support_soundness(show):
    t0 = time.perf_counter()
    ok, detail = ball_soundness()
    show(1, "ball support soundness", ok, "60s per seed", time.perf_counter() - t0, detail)
    assert ok, detail


# 2 --------------------------------------------------------------------------

def closed_form_vs_pullback():
    single = make_taper("single", 0.1)
    rng = np.random.default_rng(SEED)
    worst_all, rows = 0.0, []
    for name in BALL_SEEDS:
        bs = cons.ball_support(cons.seeds()[name], single)
        n = bs.field.patch.dim
        tau = se.eval_point(bs.tau, {})
        d = rng.normal(size=(1000, n))
        d /= np.linalg.norm(d, axis=1)[:, None]
        ts = rng.uniform(0.05, 0.75, size=1000)
        pts = d * (0.5 * np.exp(tau * ts))[:, None]
        oracle = ex.pullback_bivector(cons.radial_map(bs), bs.source.pi, points=pts)
        worst = float(np.max(np.abs(bs.field.dense(pts) - oracle.dense(pts))))
        worst_all = max(worst_all, worst)
        rows.append(f"{name} {worst:.1e}")
    return worst_all <= 1e-9, "max |closed - pullback| " + ", ".join(rows)


def test_2_closed_form_matches_pullback(show):
    t0 = time.perf_counter()
    ok, detail = closed_form_vs_pullback()
    dt = time.perf_counter() - t0
    show(2, "closed form vs Jacobian pullback", ok and dt < 30, 30, dt, detail)
    assert ok and dt < 30, detail


# 3 --------------------------------------------------------------------------

def product_structure():
    a, b, res = gallery.product_example()
    fld = res.field
    n1, n2 = a.field.patch.dim, b.field.patch.dim
    shifted = {(i + n1, j + n1): c for (i, j), c in b.field.coeffs.items()}
    plain = MultivectorField(fld.patch, 2, {**a.field.coeffs, **shifted})
    box = [(float(lo), float(hi)) for lo, hi in res.support_boxes[0] + res.support_boxes[1]]
    ident = verify.germ_compare(fld, plain, {"kind": "box", "bounds": box})
    enc = np.array([(float(lo), float(hi)) for lo, hi in res.enclosures[0] + res.enclosures[1]])
    pts = np.random.default_rng(SEED).uniform(-3.0, 3.0, size=(20_000, n1 + n2))
    inside = (pts > enc[:, 0]) & (pts < enc[:, 1])
    off = ~inside[:, :n1].all(axis=1) | ~inside[:, n1:].all(axis=1)
    outside = pts[off][:5000]
    sup = verify.support_check(fld, outside)
    jac = verify.jacobi_residual(fld, verify.GridSpec({"kind": "box", "bounds": (1.2 * enc).tolist()},
                                                      count=10_000, seed=SEED))
    ok = ident.passed and ident.details.get("path") == "symbolic" and sup.passed and jac.worst <= 1e-8
    return ok, (f"sum identity {ident.details.get('path')} {ident.passed}, "
                f"zero off U1xU2 at {len(outside)} pts {sup.passed}, "
                f"jacobi {jac.worst:.1e}")


def test_3_product_structure(show):
    t0 = time.perf_counter()
    ok, detail = product_structure()
    dt = time.perf_counter() - t0
    show(3, "product of compactly supported structures", ok and dt < 60, 60, dt, detail)
    assert ok and dt < 60, detail


# 4 --------------------------------------------------------------------------

def patchwork_square():
    pw = pw_mod.assemble_patchwork(pw_mod.two_triangle_square((1, 0)), seed=SEED)
    axis = np.linspace(0.0, 1.0, 60)
    pts = np.array([(x, y) for x in axis for y in axis])
    ranks = verify.rank_map(pw.field, pts).ranks
    # triangle 1 is (0,0), (1,0), (1,1): strict interior 0 < y < x < 1
    eps = 1e-12
    interior = (pts[:, 1] > eps) & (pts[:, 0] - pts[:, 1] > eps) & (pts[:, 0] < 1 - eps)
    expected = np.where(interior, 2, 0)
    mism = int(np.count_nonzero(ranks != expected))
    faces = pw.report["shared_faces"]
    worst = max(f["worst_derivative"] for f in faces)
    order = min(f["order"] for f in faces)
    m = pw_mod.simplex_ball_map(2)
    x, y = se.var("x"), se.var("y")
    formula = (m.components[0] is se.mul(2, se.mul(se.sqrt(se.div(se.add(1, y), se.sub(1, y))), x))
               and m.components[1] is y)
    ok = mism == 0 and worst <= 1e-6 and order >= 5 and formula and pw.report["pass"]
    return ok, (f"lattice ranks mismatched at {mism}/{len(pts)} pts, diagonal derivative mismatch "
                f"{worst:.1e} through order {order - 1}, phi2 formula {'matches' if formula else 'differs'}")


def test_4_patchwork(show):
    t0 = time.perf_counter()
    ok, detail = patchwork_square()
    dt = time.perf_counter() - t0
    show(4, "two-triangle patchwork", ok and dt < 60, 60, dt, detail)
    assert ok and dt < 60, detail


# 5 --------------------------------------------------------------------------

def pfaffian_classifier():
    grid = verify.GridSpec({"kind": "box", "bounds": [(-1, 1)] * 7}, count=200, seed=SEED)
    found = []
    for k in range(4):
        pd = bd.pfaffian_data(bd.darboux_form(7, k), grid)
        dims = {int(bd.pfaffian_kernel(pd, pd.points[:20])["frames"].shape[2])}
        found.append((pd.k == k and pd.regular and dims == {7 - 2 * k - 1}, pd.k, dims))
    k3, regular, witness = bd.pfaffian_class(
        bd.nonregular_form(), verify.GridSpec({"kind": "box", "bounds": [(-1, 1)] * 3}, count=500, seed=SEED))
    flagged = (not regular) and witness is not None and abs(witness[1]) <= 1e-9
    ok = all(f[0] for f in found) and flagged
    classes = ", ".join(f"k={f[1]} ker={sorted(f[2])}" for f in found)
    return ok, f"{classes}; non-regular flagged {flagged} at x2={witness[1] if witness else None:.1e}"


def test_5_pfaffian_classifier(show):
    t0 = time.perf_counter()
    ok, detail = pfaffian_classifier()
    dt = time.perf_counter() - t0
    show(5, "Pfaffian classifier", ok and dt < 10, 10, dt, detail)
    assert ok and dt < 10, detail


# 6 --------------------------------------------------------------------------

def dirac_interpolation():
    double = make_taper("double", 0.1)
    grid = verify.GridSpec({"kind": "box", "bounds": [(-1, 1)] * 3}, count=50, seed=SEED)
    rows, ok = [], True
    for label, k in (("closed", 0), ("contact", 1)):
        pd = bd.pfaffian_data(bd.darboux_form(3, k), grid)
        di = bd.dirac_interpolation(pd, double)
        pts = np.concatenate([bd.collar_points(pd.patch, 200, (1 - 1e-2, 1.0), SEED),
                              bd.collar_points(pd.patch, 50, (1 - 1e-3, 1 - 1e-3), SEED + 1),
                              bd.collar_points(pd.patch, 100, (1.0, 3.0), SEED + 2)])
        dist = bd.spinor_distance(di.normalized, di.limit, pts)
        order = se.est_flat_order(di.scalar, "t", 1.0, kmax=6)
        ok &= dist <= 1e-10 and order >= 6
        rows.append(f"{label} distance {dist:.1e} flat order {order}")
    return ok, "; ".join(rows)


def test_6_dirac_interpolation(show):
    t0 = time.perf_counter()
    ok, detail = dirac_interpolation()
    dt = time.perf_counter() - t0
    show(6, "Dirac interpolation limit", ok and dt < 10, 10, dt, detail)
    assert ok and dt < 10, detail


# 7 --------------------------------------------------------------------------

def extension_pipeline():
    double = make_taper("double", 0.1)
    rows, ok = [], True
    expected = {"contact-ball": {"t<1": [4], "1<=t<2": [0], "t>=2": [0]},
                "cosymplectic": {"t<1": [4], "1<=t<2": [2], "t>=2": [0]}}
    for name, model in (("contact-ball", bd.contact_ball_model), ("cosymplectic", bd.cosymplectic_model)):
        res = bd.poisson_extension(model(), double, samples=20_000, seed=SEED)
        cert = res.certificate
        st = cert["stages"]
        jac = st["jacobi"]["worst"]
        germ = st["germ"]["worst"]
        good = (cert["pass"] and cert["rank_profile"] == expected[name] and st["rank t<1"]["pass"]
                and jac <= 1e-8 and germ <= 1e-10 and st["jacobi"]["details"]["points"] == 20_000)
        ok &= good
        rows.append(f"{name} ranks {cert['rank_profile']} jacobi {jac:.1e} germ {germ:.1e}")
    return ok, "; ".join(rows)


def test_7_extension_pipeline(show):
    t0 = time.perf_counter()
    ok, detail = extension_pipeline()
    dt = time.perf_counter() - t0
    show(7, "Poisson extension pipeline", ok and dt < 120, 120, dt, detail)
    assert ok and dt < 120, detail


# 8 --------------------------------------------------------------------------

def negative_controls():
    rep = verify.jacobi_residual(gallery.non_poisson_fixture(),
                                 verify.GridSpec({"kind": "box", "bounds": [(-1, 1)] * 3}, n=5, mode="lattice"))
    jac_ok = not rep.passed and rep.witness == [1.0, 1.0, 1.0]
    try:
        make_taper("single", 0.5)
        taper_ok = False
    except TaperError:
        taper_ok = True
    gamma = bd.nonregular_form()
    sigma = FormField(gamma.patch, 2, {(1, 2): 1})
    pc = bd.check_pseudoconvex(bd.BoundaryData(sigma, gamma),
                               verify.GridSpec({"kind": "box", "bounds": [(-1, 1)] * 3}, count=400, seed=SEED))
    pc_ok = pc.a is False and "a" in pc.witness
    return jac_ok and taper_ok and pc_ok, (f"non-Poisson witness {rep.witness}, delta=0.5 rejected {taper_ok}, "
                                          f"non-regular boundary flagged {pc_ok}")


def test_8_negative_controls(show):
    t0 = time.perf_counter()
    ok, detail = negative_controls()
    dt = time.perf_counter() - t0
    show(8, "negative controls", ok and dt < 10, 10, dt, detail)
    assert ok and dt < 10, detail


# 9 --------------------------------------------------------------------------

def gallery_determinism():
    cfg = gallery.GalleryConfig(seed=SEED)
    first = gallery.gallery_json(gallery.run_gallery(cfg)).encode()
    second = gallery.gallery_json(gallery.run_gallery(cfg)).encode()
    return first == second, f"{len(first)} bytes, identical {first == second}"


def test_9_determinism(show):
    t0 = time.perf_counter()
    ok, detail = gallery_determinism()
    dt = time.perf_counter() - t0
    show(9, "gallery determinism", ok and dt < 600, 600, dt, detail)
    assert ok and dt < 600, detail


CRITERIA = [(1, "ball support soundness", ball_soundness, 360),
            (2, "closed form vs Jacobian pullback", closed_form_vs_pullback, 30),
            (3, "product of compactly supported structures", product_structure, 60),
            (4, "two-triangle patchwork", patchwork_square, 60),
            (5, "Pfaffian classifier", pfaffian_classifier, 10),
            (6, "Dirac interpolation limit", dirac_interpolation, 10),
            (7, "Poisson extension pipeline", extension_pipeline, 120),
            (8, "negative controls", negative_controls, 10),
            (9, "gallery determinism", gallery_determinism, 600)]


if __name__ == "__main__":
    failures = 0
    for number, title, fn, budget in CRITERIA:
        t0 = time.perf_counter()
        ok, detail = fn()
        dt = time.perf_counter() - t0
        ok = ok and dt < budget
        failures += not ok
        report(number, title, ok, budget, dt, detail)
    raise SystemExit(1 if failures else 0)
