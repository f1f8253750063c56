"""Flat reparametrisations of the collar coordinate and Casimir bumps.

A taper is an increasing diffeomorphism f: [0, 1) -> [0, inf) that is the
identity near 0 and blows up at 1 fast enough that 1/f, 1/f' and their
relatives vanish to infinite order there.  Two growth regimes are offered:

* ``single``: f(t) = exp(1/(1-t)) near 1;
* ``double``: f(t) = exp(exp(1/(1-t))) near 1.

Between ``delta`` and ``1 - delta`` the two ends are blended with a flat
step s, f = (1-s) t + s F.  Because F > t and s' >= 0 the blend is
automatically increasing.

Every quantity of the form f^p f'^q exp(lam f) is available as a gadget
expression that is evaluated through logarithms (f itself overflows double
precision long before t reaches 1) and, when it is flat at t = 1, extended
by an exact zero branch.
"""

from __future__ import annotations

import numpy as np

from . import symexpr as se

__all__ = ["TaperError", "FlatTaper", "make_taper", "make_bump", "make_separating_bumps",
           "box_bump", "REGIMES"]

REGIMES = ("single", "double")


class TaperError(ValueError):
    pass


class FlatTaper:
    """Flat taper in the variable ``var`` (default ``t``)."""

    def __init__(self, regime: str, delta: float, var: str = "t", grid: int = 10_000):
        if regime in ("single-exp", "single_exp"):
            regime = "single"
        if regime in ("double-exp", "double_exp"):
            regime = "double"
        if regime not in REGIMES:
            raise TaperError(f"unknown taper regime {regime!r}; expected one of {REGIMES}")
        delta = se.Fraction(str(delta)) if not isinstance(delta, se.Fraction) else delta
        if not 0 < delta <= se.Fraction(1, 5):
            raise TaperError(
                f"blend half-width {float(delta)} outside (0, 0.2]: the blend interval "
                f"[delta, 1-delta] cannot host a monotone flat transition")
        self.regime = regime
        self.delta = delta
        self.var = var
        t = se.var(var)
        self.t = t
        d = delta
        one_minus = se.sub(1, t)
        # log F and its derivative
        if regime == "single":
            lF = se.div(1, one_minus)
            big_F = se.flatexp1(t)
            log_dlF = se.mul(-2, se.log(one_minus))
        else:
            lF = se.flatexp1(t)
            big_F = se.flatexp2(t)
            log_dlF = se.sub(se.div(1, one_minus), se.mul(2, se.log(one_minus)))
        dlF = se.diff(lF, var)
        self.log_F = lF
        # blend weight and its derivative on the blend interval
        u = se.div(se.sub(t, d), 1 - 2 * d)
        hu = se.exp(se.neg(se.div(1, u)))
        hv = se.exp(se.neg(se.div(1, se.sub(1, u))))
        s_mid = se.div(hu, se.add(hu, hv))
        ds_mid = se.diff(s_mid, var)
        self.blend = se.piecewise(t, d, se.ZERO, se.piecewise(t, 1 - d, s_mid, se.ONE))
        self._pieces = dict(lF=lF, F=big_F, log_dlF=log_dlF, dlF=dlF, s=s_mid, ds=ds_mid)
        # f and f' (direct forms)
        f_mid = se.add(se.mul(se.sub(1, s_mid), t), se.mul(s_mid, big_F))
        fp_tail = se.diff(big_F, var)
        fp_mid = se.diff(f_mid, var)
        self.f = self._three(t, f_mid, big_F)
        self.fprime = self._three(se.ONE, fp_mid, fp_tail)
        # log-domain forms
        e_neg = se.exp(se.neg(lF))
        lf_mid = se.add(lF, se.log(se.add(s_mid, se.mul(se.sub(1, s_mid), t, e_neg))))
        lfp_mid = se.add(lF, se.log(se.add(
            se.mul(s_mid, dlF), ds_mid, se.mul(se.sub(se.sub(1, s_mid), se.mul(ds_mid, t)), e_neg))))
        self._lf_mid, self._lfp_mid = lf_mid, lfp_mid
        self.log_f = self._three(se.log(t), lf_mid, lF)
        self.log_fprime = self._three(se.ZERO, lfp_mid, se.add(lF, log_dlF))
        self._gadgets = {}
        self._check_monotone(grid)

    def _three(self, head, mid, tail):
        d = self.delta
        return se.piecewise(self.t, d, head, se.piecewise(self.t, 1 - d, mid, tail))

    def _check_monotone(self, n):
        ts = np.linspace(0.0, 1.0, n, endpoint=False)[1:]
        # f' > 0 iff log f' is a finite real number
        with np.errstate(invalid="ignore"):
            lfp = se.evaluate(self.log_fprime, {self.var: ts})
        bad = ~np.isfinite(lfp) & ~(np.isposinf(lfp))
        if bad.any():
            raise TaperError(f"taper derivative is not positive at t={ts[np.argmax(bad)]:.6g}")
        lf = se.evaluate(self.log_f, {self.var: ts})
        with np.errstate(invalid="ignore"):
            step = np.diff(lf)
        if np.any(step <= 0):
            i = int(np.argmax(step <= 0))
            raise TaperError(f"taper is not increasing near t={ts[i]:.6g}")

    # -- gadgets -----------------------------------------------------------

    @staticmethod
    def _lam_value(lam):
        if isinstance(lam, se.Expr):
            if se.free_vars(lam):
                raise TaperError("the weight must be a constant expression")
            return se.eval_point(lam, {})
        return float(lam)

    def is_flat(self, p, q, lam=0) -> bool:
        """Whether f^p f'^q exp(lam f) vanishes to infinite order at t = 1."""
        lv = self._lam_value(lam)
        if lv < 0:
            return True
        if lv > 0:
            return False
        if p + q < 0:
            return True
        if p + q == 0 and q < 0:
            return self.regime == "double"
        return False

    def limit_at_one(self, p, q, lam=0):
        """Exact value used for t >= 1, or None if the quantity has no
        smooth extension (it blows up or only vanishes to finite order)."""
        if self.is_flat(p, q, lam):
            return se.ZERO
        if self._lam_value(lam) == 0 and p == 0 and q == 0:
            return se.ONE
        return None

    def gadget(self, p: int, q: int, lam=0, allow_finite=False) -> se.Expr:
        """f^p f'^q exp(lam f) for t >= 0, extended by its limit for t >= 1.

        ``lam`` is a rational number or a constant expression (such as a
        multiple of log 2).  ``allow_finite`` permits a zero extension of
        quantities that vanish at t = 1 only to finite order (f/f' in the
        single regime); the result is then only finitely differentiable there.
        """
        lam = lam if isinstance(lam, se.Expr) else se.const(lam)
        key = (p, q, lam, allow_finite)
        if key in self._gadgets:
            return self._gadgets[key]
        lv = self._lam_value(lam)
        limit = self.limit_at_one(p, q, lam)
        if limit is None:
            if allow_finite and lv == 0 and p + q == 0 and q < 0:
                limit = se.ZERO
            else:
                raise TaperError(
                    f"f^{p} f'^{q} exp({lv:g} f) has no smooth extension past t=1 in the {self.regime} regime")
        if limit is se.ONE:
            self._gadgets[key] = se.ONE
            return se.ONE
        t, P = self.t, self._pieces
        head = se.mul(se.power(t, p), se.exp(se.mul(lam, t)))
        mid = se.exp(se.add(se.mul(p, self._lf_mid), se.mul(q, self._lfp_mid)))
        tail = se.exp(se.add(se.mul(p + q, P["lF"]), se.mul(q, P["log_dlF"])))
        if lv != 0:
            mid = se.mul(mid, se.exp(se.mul(lam, se.exp(self._lf_mid))))
            tail = se.mul(tail, se.exp(se.mul(lam, P["F"])))
        inner = self._three(head, mid, tail)
        g = se.piecewise(t, 1, inner, limit)
        self._gadgets[key] = g
        return g

    def inv_f_pow(self, i: int):
        """1/f^i (i >= 1), zero for t >= 1."""
        return self.gadget(-i, 0)

    def inv_fp_f_pow(self, i: int):
        """1/(f' f^i), zero for t >= 1."""
        return self.gadget(-i, -1)

    def f_over_fp(self, allow_finite=False):
        """f/f', zero for t >= 1 (flat only in the double regime)."""
        return self.gadget(1, -1, allow_finite=allow_finite)

    def __repr__(self):
        return f"FlatTaper({self.regime!r}, delta={float(self.delta)})"

    def describe(self):
        return {"regime": self.regime, "delta": float(self.delta)}


def make_taper(regime: str = "double", delta: float = 0.1, var: str = "t") -> FlatTaper:
    return FlatTaper(regime, delta, var)


def _falling(u):
    """1 - smooth_step(u) restricted to 0 < u < 1."""
    hu = se.exp(se.neg(se.div(1, u)))
    hv = se.exp(se.neg(se.div(1, se.sub(1, u))))
    return se.div(hv, se.add(hu, hv))


class CasimirBump:
    """g = 1 for arg <= a, strictly decreasing on (a, b), g = 0 for arg >= b."""

    def __init__(self, a, b, arg="t"):
        a, b = se.Fraction(str(a)), se.Fraction(str(b))
        if not a < b:
            raise TaperError(f"bump needs a < b, got a={float(a)}, b={float(b)}")
        self.a, self.b = a, b
        arg = se._e(arg)
        self.arg = arg
        u = se.div(se.sub(arg, a), b - a)
        self.expr = se.piecewise(arg, a, se.ONE, se.piecewise(arg, b, _falling(u), se.ZERO))

    def at(self, arg):
        """The same bump profile applied to another argument expression."""
        return CasimirBump(self.a, self.b, arg)

    def describe(self):
        return [float(self.a), float(self.b)]

    def __repr__(self):
        return f"CasimirBump({float(self.a)}, {float(self.b)})"


def make_bump(a=1, b=2, arg="t") -> CasimirBump:
    return CasimirBump(a, b, arg)


def box_bump(x, lo_in, hi_in, lo_out, hi_out):
    """One-axis plateau: 1 on [lo_in, hi_in], 0 outside (lo_out, hi_out)."""
    x = se._e(x)
    f = se.Fraction
    lo_in, hi_in, lo_out, hi_out = (f(str(v)) for v in (lo_in, hi_in, lo_out, hi_out))
    rise = _falling(se.div(se.sub(lo_in, x), lo_in - lo_out))
    fall = _falling(se.div(se.sub(x, hi_in), hi_out - hi_in))
    return se.piecewise(x, lo_out, se.ZERO, se.piecewise(
        x, lo_in, rise, se.piecewise(x, hi_in, se.ONE, se.piecewise(x, hi_out, fall, se.ZERO))))


def make_separating_bumps(support_box, enclosing_box, varnames):
    """Product of per-axis plateaus: 1 on ``support_box``, 0 off ``enclosing_box``.

    Boxes are lists of (lo, hi) per axis.
    """
    if len(support_box) != len(varnames) or len(enclosing_box) != len(varnames):
        raise TaperError("box dimension does not match the variables")
    factors = []
    for v, (a, b), (A, B) in zip(varnames, support_box, enclosing_box):
        if not (A < a < b < B):
            raise TaperError(f"support interval ({a}, {b}) is not strictly inside ({A}, {B})")
        factors.append(box_bump(se.var(v), a, b, A, B))
    return se.mul(*factors)
