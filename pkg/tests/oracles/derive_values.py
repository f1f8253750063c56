"""Independent derivations of the frozen values used in the test suite.

Everything here is computed with sympy or plain combinatorics, without
importing the package.  Run it to reproduce the constants:

    python3 tests/oracles/derive_values.py
"""

import itertools
import json

import sympy as sp

x, y, z, t = sp.symbols("x y z t")


def schouten_self(P, xs):
    """[P, P]^{ijk} = 2 sum_l cyclic(P^{li} d_l P^{jk}), brute force over all index triples."""
    n = len(xs)
    out = {}
    for i, j, k in itertools.combinations(range(n), 3):
        s = 0
        for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
            for l in range(n):
                s += 2 * P[l, a] * sp.diff(P[b, c], xs[l])
        out[(i + 1, j + 1, k + 1)] = sp.expand(s)
    return out


def bivector(entries, n):
    P = sp.zeros(n, n)
    for (i, j), c in entries.items():
        P[i, j], P[j, i] = c, -c
    return P


def lie_derivative_bivector(X, P, xs):
    n = len(xs)
    out = sp.zeros(n, n)
    for i in range(n):
        for j in range(n):
            out[i, j] = sp.expand(sum(X[l] * sp.diff(P[i, j], xs[l]) - P[l, j] * sp.diff(X[i], xs[l])
                                      - P[i, l] * sp.diff(X[j], xs[l]) for l in range(n)))
    return out


def perm_sign(p):
    s = 1
    p = list(p)
    for a in range(len(p)):
        for b in range(a + 1, len(p)):
            if p[a] > p[b]:
                s = -s
    return s


def wedge_top(forms, n):
    """Coefficient of dx_1^...^dx_n in the wedge of 1-forms and 2-forms, by a signed permutation sum."""
    total = 0
    for perm in itertools.permutations(range(n)):
        pos, term = 0, 1
        for f in forms:
            deg = f["deg"]
            idx = perm[pos:pos + deg]
            term *= f["c"](idx)
            pos += deg
        total += perm_sign(perm) * term
    # each 2-form slot is counted twice (antisymmetric coefficient table)
    return sp.simplify(total / 2 ** sum(1 for f in forms if f["deg"] == 2))


def main():
    vals = {}
    # d/dt exp(1/(1-t)) at t = 1/2
    vals["dflatexp1_half"] = float(sp.diff(sp.exp(1 / (1 - t)), t).subs(t, sp.Rational(1, 2)))
    # non-Poisson and so(3) brackets
    xs = (x, y, z)
    bad = bivector({(1, 2): z, (2, 0): x, (0, 1): y}, 3)
    vals["non_poisson_component"] = str(schouten_self(bad, xs)[(1, 2, 3)])
    so3 = bivector({(0, 1): z, (1, 2): x, (2, 0): y}, 3)
    vals["so3_component"] = str(schouten_self(so3, xs)[(1, 2, 3)])
    # Euler field on x d_y ^ d_z
    L = lie_derivative_bivector(xs, bivector({(1, 2): x}, 3), xs)
    vals["euler_lie_x_dydz"] = str(L[1, 2])
    # gamma ^ d gamma for gamma = dx1 + x2 dx3
    g = [1, 0, y]
    dg = sp.zeros(3, 3)
    for i in range(3):
        for j in range(3):
            dg[i, j] = sp.diff(g[j], xs[i]) - sp.diff(g[i], xs[j])
    vals["dgamma_23"] = str(dg[1, 2])
    vals["gamma_wedge_dgamma"] = str(wedge_top([{"deg": 1, "c": lambda idx: g[idx[0]]},
                                                {"deg": 2, "c": lambda idx: dg[idx[0], idx[1]]}], 3))
    # Jacobian determinant of phi_2 at the origin
    phi = sp.Matrix([2 * sp.sqrt((1 + y) / (1 - y)) * x, y])
    vals["phi2_det_origin"] = float(phi.jacobian([x, y]).det().subs({x: 0, y: 0}))
    # phi_2 on the edge x = (1 - y)/2
    vals["phi2_edge"] = {str(yy): [float(c) for c in phi.subs({x: (1 - yy) / 2, y: yy})]
                         for yy in (sp.Rational(-1, 2), 0, sp.Rational(1, 2))}
    # strict interior lattice points of the lower triangle of [0,1]^2 on an N x N lattice
    for N in (60, 200):
        inside = sum(1 for i in range(N) for j in range(N) if 0 < j < i < N - 1)
        vals[f"triangle_interior_{N}"] = {"2": inside, "0": N * N - inside}
    print(json.dumps(vals, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
