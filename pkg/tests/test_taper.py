import numpy as np
import pytest
from hypothesis import given, strategies as st

from compactpoisson import symexpr as se
from compactpoisson.taper import (TaperError, make_bump, make_separating_bumps, make_taper)


@pytest.fixture(scope="module")
def single():
    return make_taper("single", 0.1)


@pytest.fixture(scope="module")
def double():
    return make_taper("double", 0.1)


def ev(e, **kw):
    return float(se.evaluate(e, {k: np.array([v], dtype=float) for k, v in kw.items()})[0])


def test_identity_near_zero(single, double):
    assert ev(single.f, t=0.05) == 0.05
    assert ev(double.f, t=0.05) == 0.05
    assert ev(single.fprime, t=0.05) == 1.0


def test_tail_matches_exponential(single, double):
    assert ev(single.log_f, t=0.95) == pytest.approx(1 / 0.05, rel=1e-12)
    assert ev(double.log_f, t=0.95) == pytest.approx(np.exp(1 / 0.05), rel=1e-12)


def test_log_domain_near_one(single):
    # e^1000 overflows doubles, but its logarithm is exact
    assert ev(single.log_f, t=1 - 1e-3) == pytest.approx(1000.0, rel=1e-9)


def test_double_inverse_fp_f_is_flat(double):
    g = double.inv_fp_f_pow(1)
    assert se.est_flat_order(g, "t", 1.0, kmax=6) >= 6
    assert ev(g, t=1.0) == 0.0 and ev(g, t=1.7) == 0.0


@pytest.mark.parametrize("regime", ["single", "double"])
def test_inverse_powers_flat(regime):
    tp = make_taper(regime, 0.1)
    for g in (tp.inv_f_pow(1), tp.inv_f_pow(2), tp.inv_fp_f_pow(1)):
        assert se.est_flat_order(g, "t", 1.0, kmax=6) == 6


def test_f_over_fp_depends_on_regime(single, double):
    assert double.is_flat(1, -1)
    assert not single.is_flat(1, -1)
    with pytest.raises(TaperError):
        single.f_over_fp()
    assert se.est_flat_order(double.f_over_fp(), "t", 1.0, kmax=6) == 6
    finite = single.f_over_fp(allow_finite=True)
    assert se.est_flat_order(finite, "t", 1.0, kmax=6) < 6


def test_ratio_identity(single, double):
    ts = np.linspace(0.2, 1 - 1e-3, 400)
    for tp in (single, double):
        a = se.evaluate(tp.f_over_fp(allow_finite=True), {"t": ts})
        b = se.evaluate(tp.inv_f_pow(1), {"t": ts})
        c = se.evaluate(tp.gadget(0, -1), {"t": ts})
        assert np.allclose(a * b, c, rtol=1e-10, atol=1e-300)


def test_positive_weight_rejected(single):
    with pytest.raises(TaperError):
        single.gadget(0, 0, lam=1)
    assert single.gadget(0, 0, lam=-1) is not None


@pytest.mark.parametrize("delta", [0.5, 0.0, -0.1, 0.25])
def test_bad_delta_rejected(delta):
    with pytest.raises(TaperError, match="outside"):
        make_taper("single", delta)


def test_unknown_regime():
    with pytest.raises(TaperError):
        make_taper("triple", 0.1)


@given(st.lists(st.floats(0.0, 0.999, allow_nan=False), min_size=2, max_size=2, unique=True))
def test_single_taper_increasing(pair):
    tp = make_taper("single", 0.1)
    t1, t2 = sorted(pair)
    if t2 - t1 < 1e-9:
        return
    lf = se.evaluate(tp.log_f, {"t": np.array([max(t1, 1e-300), t2])})
    assert lf[1] > lf[0]


def test_thousand_random_pairs(single, rng):
    pairs = np.sort(rng.uniform(0.0, 0.999, size=(1000, 2)), axis=1)
    pairs = pairs[pairs[:, 1] - pairs[:, 0] > 1e-9]
    f = se.evaluate(single.log_f, {"t": pairs.ravel()}).reshape(pairs.shape)
    assert np.all(f[:, 1] > f[:, 0])


# -- bumps ----------------------------------------------------------------

def test_bump_values():
    g = make_bump(1, 2).expr
    assert ev(g, t=1.0) == 1.0
    assert ev(g, t=2.0) == 0.0
    assert ev(g, t=0.5) == 1.0
    assert 0 < ev(g, t=1.5) < 1
    assert se.structurally_zero_at(g, {"t": 3.0})


def test_bump_monotone_and_flat():
    g = make_bump(1, 2).expr
    ts = np.linspace(1.05, 1.95, 500)
    vals = se.evaluate(g, {"t": ts})
    assert np.all(np.diff(vals) < 0)
    assert se.est_flat_order(se.sub(g, 1), "t", 1.0, kmax=6) == 6
    assert se.est_flat_order(g, "t", 2.0, kmax=6) == 6


def test_bump_plateau_derivative_is_zero():
    g = make_bump(1, 2).expr
    dg = se.diff(g, "t")
    assert se.structurally_zero_at(dg, {"t": 0.3})
    assert se.structurally_zero_at(dg, {"t": 2.5})


def test_bump_order():
    with pytest.raises(TaperError):
        make_bump(2, 1)
    with pytest.raises(TaperError):
        make_bump(1, 1)


def test_separating_bumps():
    names = ["x1", "x2", "x3"]
    chi = make_separating_bumps([(-1, 1)] * 3, [(-2, 2)] * 3, names)
    at = lambda p: ev(chi, **dict(zip(names, p)))
    assert at((0, 0, 0)) == 1.0
    for k in range(3):
        for s in (3, -3):
            p = [0.0, 0.0, 0.0]
            p[k] = s
            assert at(p) == 0.0
    assert se.resolve(chi, {n: (-1, 1) for n in names}, open_region=True) is se.ONE
    dchi = se.diff(chi, "x1")
    assert se.structurally_zero_at(dchi, {"x1": 0.2, "x2": -0.5, "x3": 0.9})


def test_separating_bumps_not_nested():
    with pytest.raises(TaperError):
        make_separating_bumps([(-1, 3)], [(-2, 2)], ["x"])
    with pytest.raises(TaperError):
        make_separating_bumps([(-1, 1)], [(-2, 2), (-2, 2)], ["x"])
