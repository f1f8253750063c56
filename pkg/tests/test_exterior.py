import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from compactpoisson import exterior as ex
from compactpoisson import symexpr as se
from compactpoisson.exterior import FormField, MultivectorField
from compactpoisson.symexpr import PatchSpec
from compactpoisson.taper import make_taper

R2 = PatchSpec(["x", "y"])
R3 = PatchSpec(["x", "y", "z"])
x, y, z = R3.vars()

# frozen from tests/oracles/derive_values.py
NON_POISSON_COMPONENT = {(1, 0, 0): 2, (0, 1, 0): 2, (0, 0, 1): 2}
PHI2_DET_ORIGIN = 2.0


def at(e, patch, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return se.evaluate(e, {v: pts[:, i] for i, v in enumerate(patch.varnames)})


# -- algebra -----------------------------------------------------------------

def test_wedge_of_coordinate_differentials():
    w = ex.wedge(FormField(R2, 1, {0: 1}), FormField(R2, 1, {1: 1}))
    assert w.coeffs == {(0, 1): se.ONE}


def test_antisymmetric_lookup():
    w = FormField(R3, 2, {(0, 2): x})
    assert w[2, 0] is se.neg(x)
    assert w[0, 0] is se.ZERO


def test_pfaffian_class_three_powers():
    P = PatchSpec(["x1", "x2", "x3"])
    x1, x2, x3 = P.vars()
    g = FormField(P, 1, {0: 1, 2: x2})
    dg = ex.exterior_d(g)
    assert dg.coeffs == {(1, 2): se.ONE}
    assert ex.wedge(g, dg).coeffs == {(0, 1, 2): se.ONE}
    assert ex.wedge(g, ex.wedge_power(dg, 2)).is_structurally_zero()


def test_d_of_x_dy():
    assert ex.exterior_d(FormField(R2, 1, {1: se.var("x")})).coeffs == {(0, 1): se.ONE}


def test_d_of_t_gamma_on_collar():
    C = PatchSpec(["x1", "x2", "x3", "t"])
    x1, x2, x3, t = C.vars()
    g = FormField(C, 1, {0: 1, 2: x2})
    lhs = ex.exterior_d(g.scale(t))
    dt = FormField(C, 1, {3: 1})
    rhs = ex.wedge(dt, g) + ex.exterior_d(g).scale(t)
    assert all(se.is_zero(c) for c in (lhs - rhs).coeffs.values())


def test_schouten_constant_bivector():
    pi = MultivectorField(R2, 2, {(0, 1): 1})
    assert ex.schouten(pi, pi).is_structurally_zero()


def test_schouten_so3_vanishes():
    pi = MultivectorField(R3, 2, {(0, 1): z, (1, 2): x, (2, 0): y})
    res = ex.schouten(pi, pi)
    assert all(se.is_zero(c) for c in res.coeffs.values())


def test_schouten_non_poisson_component():
    pi = MultivectorField(R3, 2, {(1, 2): z, (2, 0): x, (0, 1): y})
    res = ex.schouten(pi, pi)
    assert se.to_poly(res[0, 1, 2], R3.varnames) == NON_POISSON_COMPONENT
    assert at(res[0, 1, 2], R3, [1, 1, 1])[0] == 6.0


def test_euler_weights():
    X = ex.euler_field(R2)
    pi0 = MultivectorField(R2, 2, {(0, 1): 1})
    got = ex.lie_derivative(X, pi0).coeffs
    assert set(got) == {(0, 1)} and se.is_zero(se.sub(got[(0, 1)], -2))
    X3 = ex.euler_field(R3)
    pi1 = MultivectorField(R3, 2, {(1, 2): x})
    got = ex.lie_derivative(X3, pi1).coeffs
    assert set(got) <= {(1, 2)} and se.is_zero(se.sub(got[(1, 2)], se.neg(x)))


def test_lie_derivative_along_collar_of_t_independent_form():
    C = PatchSpec(["x", "y", "t"])
    g = FormField(C, 1, {0: 1, 1: se.var("x")})
    dt = FormField(C, 1, {2: 1})
    assert ex.lie_derivative(MultivectorField(C, 1, {2: 1}), ex.wedge(dt, g)).is_structurally_zero()


# -- pullbacks ---------------------------------------------------------------

def test_pullback_dy_under_collar_taper():
    taper = make_taper("single", 0.1)
    C = PatchSpec(["x", "t"])
    m = ex.ExplicitMap(C, PatchSpec(["x", "y"]), [se.var("x"), taper.f])
    pb = ex.pullback_form(m, FormField(m.target, 1, {1: 1}))
    assert pb.coeffs == {(1,): taper.fprime}


def test_pullback_area_form_under_phi2():
    from compactpoisson.patchwork import simplex_ball_map
    m = simplex_ball_map(2)
    pb = ex.pullback_form(m, FormField(m.target, 2, {(0, 1): 1}))
    assert at(pb[0, 1], m.source, [0, 0])[0] == pytest.approx(PHI2_DET_ORIGIN)


def test_pullback_bivector_linear_scaling():
    m = ex.ExplicitMap(R2, R2, [2 * se.var("x"), 2 * se.var("y")])
    pb = ex.pullback_bivector(m, MultivectorField(R2, 2, {(0, 1): 1}))
    assert pb.coeffs == {(0, 1): se.const(se.Fraction(1, 4))}


def _numeric_jacobian(m, p, h=1e-6):
    p = np.asarray(p, dtype=float)
    cols = []
    for k in range(len(p)):
        e = np.zeros_like(p)
        e[k] = h
        cols.append((m(p + e)[0] - m(p - e)[0]) / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("lam", [0, -1])
def test_collar_weight_matches_jacobian_conjugation(lam):
    taper = make_taper("single", 0.1)
    C = PatchSpec(["x", "t"])
    xv, tv = C.vars()
    m = ex.ExplicitMap(C, C, [xv, taper.f])
    pi = MultivectorField(C, 2, {(1, 0): se.exp(se.mul(lam, tv))})  # e^{lam t} d_t ^ d_x
    pb = ex.pullback_bivector(m, pi)
    closed = se.mul(se.exp(se.mul(lam, taper.f)), se.div(1, taper.fprime))
    p = [0.3, 0.5]
    J = _numeric_jacobian(m, p)
    q = m(p)[0]
    P = np.array([[0, -np.exp(lam * q[1])], [np.exp(lam * q[1]), 0]])
    Ji = np.linalg.inv(J)
    oracle = (Ji @ P @ Ji.T)[1, 0]
    assert at(pb[1, 0], C, p)[0] == pytest.approx(oracle, rel=1e-9)
    assert at(closed, C, p)[0] == pytest.approx(oracle, rel=1e-9)


def test_pullback_functoriality(rng):
    m2 = ex.ExplicitMap(R2, R2, [se.add(se.var("x"), se.mul(se.Fraction(1, 5), se.power(se.var("y"), 2))),
                                 se.var("y")])
    m1 = ex.ExplicitMap(R2, R2, [se.var("x"), se.add(se.var("y"), se.mul(se.Fraction(1, 4), se.exp(se.var("x"))))])
    pi = MultivectorField(R2, 2, {(0, 1): se.add(1, se.mul(se.var("x"), se.var("y")))})
    a = ex.pullback_bivector(m1, ex.pullback_bivector(m2, pi))
    b = ex.pullback_bivector(m2.compose_after(m1), pi)
    pts = rng.uniform(-1, 1, size=(50, 2))
    assert np.allclose(a.dense(pts), b.dense(pts), atol=1e-9)


# -- spinors -----------------------------------------------------------------

def test_spinor_of_area_form():
    rho = ex.exp_form(FormField(R2, 2, {(0, 1): 1}))
    res = ex.spinor_to_poisson(rho, [[0.1, 0.2]])
    assert res.ok
    assert res.matrices[0, 0, 1] == pytest.approx(1.0)
    assert ex.spinor_bivector(rho).coeffs == {(0, 1): se.ONE}


def test_spinor_with_zero_leaves():
    C = PatchSpec(["x1", "x2", "x3", "t"])
    x1, x2, x3, t = C.vars()
    g = FormField(C, 1, {0: 1, 2: x2})
    dt = FormField(C, 1, {3: 1})
    rho = ex.Spinor(C, [ex.wedge(dt, ex.wedge(g, ex.exterior_d(g)))])
    assert ex.spinor_bivector(rho).is_structurally_zero()


def test_spinor_cosymplectic_collar(rng):
    C = PatchSpec(["theta", "theta1", "theta2", "t"])
    sigma = FormField(C, 2, {(1, 2): 1})
    dt_gamma = ex.wedge(FormField(C, 1, {3: 1}), FormField(C, 1, {0: 1}))
    rho = ex.wedge(ex.exp_form(sigma), ex.Spinor(C, [dt_gamma]))
    pts = rng.uniform(0, 6, size=(20, 4))
    res = ex.spinor_to_poisson(rho, pts)
    assert res.ok
    want = np.zeros((4, 4))
    want[1, 2], want[2, 1] = 1, -1
    assert np.allclose(res.matrices, want)
    # annihilator oracle: (X + xi) . rho = 0 for X = pi^#(xi) and every covector xi
    P = res.matrices[0]
    for k in range(4):
        xi = np.eye(4)[k]
        X = xi @ P
        Xf = MultivectorField(C, 1, {i: float(v) for i, v in enumerate(X) if v})
        xif = FormField(C, 1, {k: 1})
        action = ex.interior(Xf, rho) + ex.wedge(xif, rho) if Xf.coeffs else ex.wedge(xif, rho)
        for p in action.parts.values():
            assert np.allclose(p.dense(pts[:1]), 0)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_spinor_inverse_involution(vals):
    P = PatchSpec(["a", "b", "c", "d"])
    keys = list(itertools.combinations(range(4), 2))
    omega = FormField(P, 2, {k: se.const(se.Fraction(v).limit_denominator(1000)) for k, v in zip(keys, vals)})
    W = omega.dense([[0, 0, 0, 0]])[0]
    if abs(np.linalg.det(W)) < 1e-2:
        return
    res = ex.spinor_to_poisson(ex.exp_form(omega), [[0, 0, 0, 0]])
    back = -np.linalg.inv(res.matrices[0])
    assert np.allclose(back, W, rtol=1e-10, atol=1e-10)


# -- properties ---------------------------------------------------------------

coef = st.integers(-3, 3)


@st.composite
def poly_forms(draw, degree):
    keys = list(itertools.combinations(range(3), degree))
    c = {}
    for k in keys:
        a, b, d, e = (draw(coef) for _ in range(4))
        c[k] = se.add(a, se.mul(b, x), se.mul(d, y, z), se.mul(e, se.power(z, 2)))
    return FormField(R3, degree, c)


@given(poly_forms(1))
def test_d_squared_vanishes(a):
    assert all(se.is_zero(c) for c in ex.exterior_d(ex.exterior_d(a)).coeffs.values())


def test_d_squared_on_flat_gadgets(rng):
    taper = make_taper("double", 0.1, var="z")
    a = FormField(R3, 1, {0: se.mul(taper.gadget(-1, -1), y), 1: se.mul(taper.f, x)})
    dd = ex.exterior_d(ex.exterior_d(a))
    pts = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100), rng.uniform(0.05, 0.95, 100)])
    assert np.nanmax(np.abs(dd.dense(pts))) <= 1e-10 if dd.coeffs else True


@given(poly_forms(2), poly_forms(2))
def test_schouten_symmetric(a, b):
    A = MultivectorField(R3, 2, a.coeffs)
    B = MultivectorField(R3, 2, b.coeffs)
    d = ex.schouten(A, B) - ex.schouten(B, A)
    assert all(se.is_zero(c) for c in d.coeffs.values())


@given(poly_forms(2))
def test_bivector_antisymmetry(a):
    A = MultivectorField(R3, 2, a.coeffs)
    for i, j in itertools.permutations(range(3), 2):
        assert se.is_zero(se.add(A[i, j], A[j, i]))


def test_field_json_round_trip():
    taper = make_taper("double", 0.1, var="z")
    f = MultivectorField(R3, 2, {(0, 1): taper.gadget(-1, -1), (1, 2): x})
    back = ex.field_from_json(ex.field_to_json(f))
    assert back.coeffs == f.coeffs and back.patch == f.patch
