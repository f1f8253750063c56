"""Command-line front end.

    compactpoisson construct KIND [--input FILE ...] [--example NAME] --out ARTIFACT
    compactpoisson verify ARTIFACT [--jacobi] [--support] [--germ] [--rank] [--out REPORT]
    compactpoisson export ARTIFACT --fields components,rank,jacobi --grid N --out FILE
    compactpoisson gallery [--only NAME ...] --out REPORT

Exit codes: 0 when every check passes, 1 when a check fails, 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import sys

import numpy as np

from . import __version__
from . import boundary as bd_mod
from . import config
from . import constructors as cons
from . import exterior as ex
from . import gallery
from . import kernels
from . import patchwork as pw_mod
from . import symexpr as se
from . import taper as tp
from . import verify

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
ARTIFACT_FORMAT = "compactpoisson.bivector"
KINDS = ("ball", "lie-algebra", "constant-rank", "product", "collar", "patchwork", "extension", "first-jet")
INPUT_ERRORS = (cons.ConstructionError, bd_mod.BoundaryError, pw_mod.PatchworkError, tp.TaperError,
                ex.ExteriorError, se.SymbolicError, KeyError, ValueError, TypeError, OSError)


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# IO helpers

def _read_json(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    with open(path, "w", newline="") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


def _dumps(obj):
    return json.dumps(verify._jsonable(obj), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# construct

def _taper(args, default_regime):
    return tp.make_taper(args.taper_regime or default_regime, args.taper_delta)


def _bump(args, var="t"):
    a, b = args.bump
    return tp.make_bump(a, b, var)


def _poly_input(args, examples):
    if args.example:
        if args.example not in examples:
            raise InputError(f"unknown example {args.example!r}; choose from {sorted(examples)}")
        return examples[args.example], None
    path = _single_input(args)
    d, text = _read_json(path)
    return d, text


def _single_input(args):
    if not args.input or len(args.input) != 1:
        raise InputError("this kind needs exactly one --input file (or --example)")
    return args.input[0]


def _ball_checks(bs: cons.BallSupported, source_field=None):
    n = bs.field.patch.dim
    center = [float(c) for c in (bs.center or [0] * n)]
    germ_region = {"kind": "ball", "radius": 0.5}
    if bs.center is not None:
        germ_region["center"] = [str(c) for c in bs.center]
    return {
        "jacobi_region": {"kind": "ball", "radius": 1.2, "center": center},
        "support": {"kind": "annulus", "r1": 1.0, "r2": 1.5, "center": center},
        "germ": {"region": germ_region, "field": ex.field_to_json(source_field or bs.source.pi)},
        "export_region": {"kind": "box", "bounds": [(c - 1.2, c + 1.2) for c in center]},
    }


def _construct_ball(poly: cons.PolyPoisson, args):
    bs = cons.ball_support(poly, _taper(args, "single"), _bump(args))
    checks = _ball_checks(bs)
    return bs.field, {"t_end": bs.t_end, "seed_field": poly.to_json()}, checks, True


def _kind_ball(args):
    d, _ = _poly_input(args, {k: v for k, v in cons.seeds().items()})
    poly = d if isinstance(d, cons.PolyPoisson) else cons.PolyPoisson.from_json(d)
    return _construct_ball(poly, args)


def _kind_lie(args):
    d, _ = _poly_input(args, {"so3": cons.so3(), "heisenberg": cons.heisenberg()})
    la = d if isinstance(d, cons.LieAlgebraData) else cons.LieAlgebraData.from_json(d)
    fld, meta, checks, ok = _construct_ball(cons.lie_linear(la), args)
    meta["lie_algebra"] = la.to_json()
    return fld, meta, checks, ok


def _kind_constant_rank(args):
    if args.n is None or args.r is None:
        raise InputError("constant-rank needs --n and --r")
    fld, meta, checks, ok = _construct_ball(cons.constant_rank(args.n, args.r), args)
    checks["rank"] = {"region": {"kind": "ball", "radius": 0.9}, "expected": [2 * args.r]}
    return fld, meta, checks, ok


def _kind_product(args):
    if not args.input or len(args.input) != 2:
        raise InputError("product needs two --input files with polynomial Poisson seeds")
    polys = []
    taken = set()
    for k, path in enumerate(args.input):
        d, _ = _read_json(path)
        n = int(d["dim"])
        names = d.get("varnames") or [f"x{i + 1}" for i in range(n)]
        if taken & set(names):
            names = [f"{'xy'[k]}{i + 1}_{k + 1}" for i in range(n)]
        taken |= set(names)
        polys.append(cons.PolyPoisson.from_json(dict(d, varnames=names)))
    taper, bump = _taper(args, "single"), _bump(args)
    a, b = (cons.ball_support(p, taper, bump) for p in polys)
    res = cons.product(a.field, b.field)
    enc = [(float(lo), float(hi)) for lo, hi in res.enclosures[0] + res.enclosures[1]]
    n1 = a.field.patch.dim
    checks = {
        "jacobi_region": {"kind": "box", "bounds": [(1.2 * lo, 1.2 * hi) for lo, hi in enc]},
        "support": {"kind": "product_complement", "enclosures": enc, "split": n1},
        "export_region": {"kind": "box", "bounds": [(1.2 * lo, 1.2 * hi) for lo, hi in enc]},
    }
    meta = {"support_boxes": [[[str(lo), str(hi)] for lo, hi in box] for box in res.support_boxes],
            "enclosures": [[[str(lo), str(hi)] for lo, hi in box] for box in res.enclosures]}
    return res.field, meta, checks, True


def _kind_collar(args):
    if args.example:
        if args.example != "exp-decay":
            raise InputError("the collar example is 'exp-decay'")
        cb = gallery.collar_example()
    else:
        d, _ = _read_json(_single_input(args))
        cb = cons.CollarBivector.from_json(d)
    tv = cb.patch.collar_var
    fld = cons.collar_extend(cb, tp.make_taper(args.taper_regime or "single", args.taper_delta, tv),
                             _bump(args, tv))
    bounds = [tuple(b) for b in cb.patch.region["bounds"]]
    delta = float(args.taper_delta)
    checks = {
        "jacobi_region": {"kind": "box", "bounds": bounds + [(-0.1, 3.0)]},
        "support": {"kind": "box", "bounds": bounds + [(float(args.bump[1]), float(args.bump[1]) + 3.0)]},
        "germ": {"region": {"kind": "box", "bounds": bounds + [(-0.1, delta)]},
                 "field": ex.field_to_json(cb.assembled())},
        "export_region": {"kind": "box", "bounds": bounds + [(-0.1, float(args.bump[1]) + 0.5)]},
    }
    return fld, {"collar": cb.to_json()}, checks, True


def _kind_patchwork(args):
    if args.example:
        if args.example != "square":
            raise InputError("the patchwork example is 'square'")
        tri = pw_mod.two_triangle_square((1, 0))
    else:
        d, _ = _read_json(_single_input(args))
        tri = pw_mod.TriangulationData.from_json(d)
    pw = pw_mod.assemble_patchwork(tri, _taper(args, "single"), _bump(args), seed=args.seed)
    region = pw_mod._bounding_region(tri)
    checks = {"jacobi_region": region, "export_region": region}
    report = json.loads(pw_mod.report_to_json(pw.report))
    return pw.field, {"triangulation": tri.to_json(), "conformance": report}, checks, bool(report["pass"])


_BOUNDARY_EXAMPLES = {"contact-ball": bd_mod.contact_ball_model, "cosymplectic": bd_mod.cosymplectic_model}


def _kind_extension(args):
    if args.example:
        if args.example not in _BOUNDARY_EXAMPLES:
            raise InputError(f"unknown boundary example {args.example!r}; choose from {sorted(_BOUNDARY_EXAMPLES)}")
        bd = _BOUNDARY_EXAMPLES[args.example]()
    else:
        d, _ = _read_json(_single_input(args))
        bd = bd_mod.BoundaryData.from_json(d)
    res = bd_mod.poisson_extension(bd, _taper(args, "double"), _bump(args, bd_mod.COLLAR_VAR),
                                   samples=args.samples, seed=args.seed)
    bounds = [tuple(b) for b in bd.patch.region.get("bounds", [(-1.0, 1.0)] * bd.patch.dim)]
    if bd.patch.region.get("kind") == "ball":
        r = float(bd.patch.region["radius"])
        bounds = [(-r / np.sqrt(bd.patch.dim), r / np.sqrt(bd.patch.dim))] * bd.patch.dim
    hi = float(args.bump[1])
    checks = {
        "jacobi_region": {"kind": "box", "bounds": bounds + [(-0.1, hi + 0.5)]},
        "support": {"kind": "box", "bounds": bounds + [(hi, hi + 3.0)]},
        "export_region": {"kind": "box", "bounds": bounds + [(-0.1, hi + 0.5)]},
    }
    return res.field, {"boundary": bd.name, **res.to_json()}, checks, bool(res.certificate["pass"])


def _kind_first_jet(args):
    if args.example:
        if args.example != "exp":
            raise InputError("the first-jet example is 'exp'")
        pi = gallery.first_jet_example()
    else:
        d, _ = _read_json(_single_input(args))
        pi = cons.PolyPoisson.from_json(d).pi if "entries" in d and "patch" not in d else ex.field_from_json(d)
    center = args.center if args.center is not None else [0.0] * pi.patch.dim
    bs = cons.first_jet_extension(pi, center, _taper(args, "single"), _bump(args))
    names = pi.patch.varnames
    src = bs.source.pi.subs({v: se.sub(se.var(v), c) for v, c in zip(names, bs.center)})
    return bs.field, {"center": [str(c) for c in bs.center]}, _ball_checks(bs, src), True


_BUILDERS = {"ball": _kind_ball, "lie-algebra": _kind_lie, "constant-rank": _kind_constant_rank,
             "product": _kind_product, "collar": _kind_collar, "patchwork": _kind_patchwork,
             "extension": _kind_extension, "first-jet": _kind_first_jet}


def _provenance(args, kind, default_regime):
    inputs = []
    for path in args.input or []:
        with open(path, "rb") as fh:
            inputs.append({"file": path, "sha256": hashlib.sha256(fh.read()).hexdigest()})
    return {"tool": "compactpoisson", "version": __version__, "kind": kind,
            "taper": {"regime": args.taper_regime or default_regime, "delta": float(args.taper_delta)},
            "bump": [float(x) for x in args.bump], "seed": args.seed, "example": args.example,
            "inputs": inputs}


def cmd_construct(args) -> int:
    fld, meta, checks, ok = _BUILDERS[args.kind](args)
    art = {"format": ARTIFACT_FORMAT, "kind": args.kind,
           "provenance": _provenance(args, args.kind, "double" if args.kind == "extension" else "single"),
           "meta": meta, "checks": checks, "field": ex.field_to_json(fld)}
    _write(args.out, _dumps(art))
    if not ok:
        print(f"construct {args.kind}: built-in certificate FAILED", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# artifacts

def load_artifact(path):
    """(field, checks) from an artifact or from a bare field / polynomial seed JSON."""
    d, _ = _read_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected a JSON object")
    if d.get("format") == ARTIFACT_FORMAT:
        return ex.field_from_json(d["field"]), d.get("checks", {})
    if "patch" in d and "entries" in d:
        fld = ex.field_from_json(d)
    elif "entries" in d and "dim" in d:
        fld = cons.PolyPoisson.from_json(d).pi
    else:
        raise InputError(f"{path}: neither an artifact nor a serialised field")
    if fld.degree != 2 or not fld.contravariant:
        raise InputError(f"{path}: expected a bivector field")
    return fld, {}


def _default_region(fld):
    reg = fld.patch.region
    if reg.get("kind") == "box":
        return {"kind": "box", "bounds": [tuple(b) for b in reg["bounds"]]}
    return {"kind": "box", "bounds": [(-1.2, 1.2)] * fld.patch.dim}


def _support_points(spec, dim, count, seed):
    kind = spec["kind"]
    if kind == "annulus":
        c = np.asarray(spec.get("center", np.zeros(dim)), dtype=float)
        return c + verify.GridSpec({"kind": "annulus", "r1": spec["r1"], "r2": spec["r2"]},
                                   count=count, seed=seed).points(dim)
    if kind == "box":
        return verify.GridSpec(spec, count=count, seed=seed).points(dim)
    if kind == "product_complement":
        enc = np.asarray(spec["enclosures"], dtype=float)
        k = int(spec["split"])
        rng = np.random.default_rng(seed)
        pts = rng.uniform(2.0 * enc[:, 0], 2.0 * enc[:, 1], size=(8 * count, dim))
        inside = (pts > enc[:, 0]) & (pts < enc[:, 1])
        off = ~inside[:, :k].all(axis=1) | ~inside[:, k:].all(axis=1)
        return pts[off][:count]
    raise InputError(f"unknown support region kind {kind!r}")


def run_checks(fld, checks, which, count, seed):
    reports = []
    n = fld.patch.dim
    if "jacobi" in which:
        reg = checks.get("jacobi_region") or _default_region(fld)
        reports.append(verify.jacobi_residual(fld, verify.GridSpec(reg, count=count, seed=seed)))
    if "support" in which and "support" in checks:
        reports.append(verify.support_check(fld, _support_points(checks["support"], n, count, seed + 1)))
    if "germ" in which and "germ" in checks:
        other = ex.field_from_json(checks["germ"]["field"])
        reports.append(verify.germ_compare(fld, other, checks["germ"]["region"]))
    if "rank" in which:
        spec = checks.get("rank")
        reg = spec["region"] if spec else (checks.get("jacobi_region") or _default_region(fld))
        rm = verify.rank_map(fld, verify.GridSpec(reg, count=min(count, 2000), seed=seed + 2))
        observed = sorted(rm.histogram)
        ok = spec is None or observed == sorted(spec["expected"])
        reports.append(verify.VerificationReport(
            "rank", ok, 0.0, None if ok else [], 0.0,
            {"histogram": rm.to_json()["histogram"], "expected": spec["expected"] if spec else None}))
    return reports


def cmd_verify(args) -> int:
    fld, checks = load_artifact(args.artifact)
    which = {k for k in ("jacobi", "support", "germ", "rank") if getattr(args, k)}
    if args.all or not which:
        which = {"jacobi", "support", "germ", "rank"}
    reports = run_checks(fld, checks, which, args.grid or 10_000, args.seed)
    if args.format == "table":
        _write(args.out, verify.reports_table(reports))
    else:
        _write(args.out, verify.reports_to_json(reports))
    if args.out not in (None, "-"):
        print(verify.reports_table(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


# ---------------------------------------------------------------------------
# export

def export_rows(fld, region, n_axis, fields):
    """Column names and rows on a lattice with ``n_axis`` points per axis."""
    dim = fld.patch.dim
    names = list(fld.patch.varnames)
    axes = [np.linspace(float(lo), float(hi), n_axis) for lo, hi in region["bounds"]]
    pts = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, dim)
    cols = names[:]
    data = [pts[:, i] for i in range(dim)]
    if "components" in fields:
        P = fld.dense(pts)
        P = np.where(np.isfinite(P), P, 0.0)
        for i, j in itertools.combinations(range(dim), 2):
            cols.append(f"pi_{i + 1}_{j + 1}")
            data.append(P[:, i, j])
    if "rank" in fields:
        cols.append("rank")
        data.append(verify.rank_map(fld, pts).ranks.astype(float))
    if "jacobi" in fields:
        P, dP = verify.evaluate_with_derivatives(fld, pts)
        ok = np.isfinite(P).all(axis=(1, 2)) & np.isfinite(dP).all(axis=(1, 2, 3))
        vals = kernels.schouten_self_max(np.where(np.isfinite(P), P, 0.0), np.where(np.isfinite(dP), dP, 0.0))
        cols.append("jacobi")
        data.append(np.where(ok, vals, 0.0))
    return cols, np.stack(data, axis=1) if data else np.zeros((len(pts), 0))


def cmd_export(args) -> int:
    fld, checks = load_artifact(args.artifact)
    fields = [f.strip() for f in args.fields.split(",") if f.strip()]
    bad = set(fields) - {"components", "rank", "jacobi"}
    if bad:
        raise InputError(f"unknown export fields {sorted(bad)}")
    region = checks.get("export_region") or _default_region(fld)
    cols, rows = export_rows(fld, region, args.grid or 50, fields)
    if args.format == "json":
        text = json.dumps({"columns": cols, "rows": [[float(f"{v:.12g}") for v in r] for r in rows]})
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([f"{v:.12g}" for v in r])
        text = buf.getvalue()
    _write(args.out, text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gallery

def cmd_gallery(args) -> int:
    cfg = gallery.GalleryConfig(seed=args.seed, delta=args.taper_delta)
    if args.grid:
        cfg = gallery.GalleryConfig(seed=args.seed, delta=args.taper_delta, jacobi_points=args.grid,
                                    collar_points=args.grid)
    if args.list:
        for e in gallery.entries():
            print(f"{e.name:26s} {e.description}")
        return EXIT_OK
    rep = gallery.run_gallery(cfg, args.only or None)
    _write(args.out, gallery.gallery_json(rep))
    for e in rep["entries"]:
        print(f"{'PASS' if e['pass'] else 'FAIL'}  {e['name']:26s} {e['runtime']:7.2f}s", file=sys.stderr)
    return EXIT_OK if rep["pass"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser

def _add_common(p):
    p.add_argument("--taper-regime", choices=tp.REGIMES, default=None,
                   help="flat taper regime (default depends on the construction)")
    p.add_argument("--taper-delta", type=float, default=0.1, help="blend half-width, in (0, 0.2]")
    p.add_argument("--bump", nargs=2, type=float, default=(1.0, 2.0), metavar=("A", "B"),
                   help="Casimir bump: 1 below A, 0 above B")
    p.add_argument("--grid", type=int, default=None, help="sample count (verify) or points per axis (export)")
    p.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    p.add_argument("--out", default=None, help="output file (stdout when omitted)")


def build_parser():
    ap = argparse.ArgumentParser(prog="compactpoisson",
                                 description="Build and certify compactly supported Poisson structures.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", help="build a bivector artifact")
    c.add_argument("kind", choices=KINDS)
    c.add_argument("--input", action="append", help="input JSON (repeat for product)")
    c.add_argument("--example", help="built-in input instead of --input")
    c.add_argument("--n", type=int, help="dimension (constant-rank)")
    c.add_argument("--r", type=int, help="half rank (constant-rank)")
    c.add_argument("--center", type=float, nargs="+", help="jet point (first-jet)")
    c.add_argument("--samples", type=int, default=20_000, help="collar samples for the extension certificate")
    _add_common(c)
    c.set_defaults(func=cmd_construct)

    v = sub.add_parser("verify", help="run checks on an artifact")
    v.add_argument("artifact")
    for name in ("jacobi", "support", "germ", "rank", "all"):
        v.add_argument(f"--{name}", action="store_true")
    v.add_argument("--format", choices=("json", "table"), default="json")
    _add_common(v)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export", help="sample an artifact on a lattice")
    e.add_argument("artifact")
    e.add_argument("--fields", default="components", help="comma list of components, rank, jacobi")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_common(e)
    e.set_defaults(func=cmd_export)

    g = sub.add_parser("gallery", help="run the example gallery")
    g.add_argument("--only", nargs="+", help="entry names")
    g.add_argument("--list", action="store_true")
    _add_common(g)
    g.set_defaults(func=cmd_gallery)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"input error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
