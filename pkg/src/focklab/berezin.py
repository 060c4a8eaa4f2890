"""Berezin transforms of |f|^2, the product ~|u|^2 ~|v|^2 and the function
B(z) = |u(z)|^2 ~|v|^2(z) for u = e^g, v = e^{-g}.

Everything is carried in log space; the planar integrals go through
``integrate_plane_log``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import QuadratureSpec, integrate_plane_log
from .special_fn import log_kernel, log_kernel_diag, theta0
from .symbols import FockContext, PolynomialSymbol, TaylorFunction, exp_taylor, log_abs_eval

DEFAULT_SPEC = QuadratureSpec(n_radial=64, n_angular=64, tol=1e-14)
RATE_LO, RATE_HI = 0.8, 1.25


@dataclass(frozen=True)
class BerezinSample:
    z: complex
    value: float
    est_abs_err: float
    log_value: float = math.nan

    def __post_init__(self):
        if math.isnan(self.log_value):
            lv = math.log(self.value) if self.value > 0 else -math.inf
            object.__setattr__(self, "log_value", lv)


@dataclass(frozen=True)
class RaySweep:
    phi: float
    xs: np.ndarray
    log_values: np.ndarray
    est_errs: np.ndarray = field(default=None)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.size > 1 and not np.all(np.diff(xs) > 0):
            raise ValueError("xs must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "log_values", np.asarray(self.log_values, dtype=float))
        errs = np.zeros_like(xs) if self.est_errs is None else np.asarray(self.est_errs, dtype=float)
        object.__setattr__(self, "est_errs", errs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "log_value", "est_err"])
        for x, lv, e in zip(self.xs, self.log_values, self.est_errs):
            w.writerow([repr(float(x)), repr(float(lv)), repr(float(e))])
        return buf.getvalue()


def _m(ctx) -> float:
    return float(getattr(ctx, "m", ctx))


def _log_growth(f: TaylorFunction):
    """Upper envelope of log|f| on |w| = r, as a function of r."""
    if f.generator is not None:
        g = f.generator
        base = math.log(abs(f.scale)) + g.coeffs[0].real if f.scale != 0 else 0.0
        mods = [abs(c) for c in g.coeffs]
        return lambda r: base + sum(a * r ** j for j, a in enumerate(mods) if j >= 1)
    mods = np.abs(f.coeffs)
    return lambda r: math.log(max(float(np.polyval(mods[::-1], r)), 1e-300))


def _log_berezin(log_phi, log_growth, m: float, z: complex, spec: QuadratureSpec):
    """log of int phi(w) |K(w,z)|^2 dlambda(w) / K(z,z) for phi = exp(log_phi)."""
    z = complex(z)
    lkzz = float(log_kernel_diag(m, z))
    az = abs(z)

    def integrand(w):
        lk, _, _ = log_kernel(m, w, z)
        return log_phi(w) + 2.0 * lk - lkzz

    def envelope(r):
        return log_growth(r) + 2.0 * (r * az) ** m + 2.0 * abs(m - 1) * math.log1p(r * az)

    res = integrate_plane_log(integrand, m, spec, log_envelope=envelope)
    return res.log_value, res.est_rel_err


def berezin_sq(f: TaylorFunction, ctx, z: complex, spec: QuadratureSpec = DEFAULT_SPEC) -> BerezinSample:
    """Berezin transform of |f|^2 at z, <|f|^2 k_z, k_z>."""
    m = _m(ctx)
    grow = _log_growth(f)
    lv, rel = _log_berezin(lambda w: 2.0 * log_abs_eval(f, w), lambda r: 2.0 * grow(r), m, z, spec)
    val = math.exp(lv) if lv < 709 else math.inf
    return BerezinSample(complex(z), val, rel * val if np.isfinite(val) else math.inf, lv)


def berezin_product(u: TaylorFunction, v: TaylorFunction, ctx, z: complex,
                    spec: QuadratureSpec = DEFAULT_SPEC, log: bool = False) -> float:
    """~|u|^2(z) * ~|v|^2(z)."""
    lu = berezin_sq(u, ctx, z, spec).log_value
    lw = berezin_sq(v, ctx, z, spec).log_value
    lv = lu + lw
    if log:
        return lv
    return math.exp(lv) if lv < 709 else math.inf


def _check_v_in_space(g: PolynomialSymbol, m: float):
    d = g.degree
    if d > 2 * m or (d == 2 * m and 2 * g.leading_modulus >= 1):
        raise ValueError("e^{-g} is not in the space: B(z) is infinite")


def log_curly_B(g: PolynomialSymbol, ctx, z: complex, spec: QuadratureSpec = DEFAULT_SPEC,
                with_err: bool = False):
    """log B(z), B(z) = |e^{g(z)}|^2 * ~|e^{-g}|^2(z)."""
    m = _m(ctx)
    _check_v_in_space(g, m)
    gz = complex(g(z)).real
    mods = [abs(c) for c in g.coeffs]

    def log_phi(w):
        return 2.0 * (gz - np.real(g(w)))

    def grow(r):
        return 2.0 * (abs(gz) + sum(a * r ** j for j, a in enumerate(mods)))

    lv, rel = _log_berezin(log_phi, grow, m, z, spec)
    return (lv, rel) if with_err else lv


def curly_B(g: PolynomialSymbol, ctx, z: complex, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    lv = log_curly_B(g, ctx, z, spec)
    return math.exp(lv) if lv < 709 else math.inf


def log_curly_B_window(g: PolynomialSymbol, ctx, z: complex, c: float = 1.0,
                       n_radial: int = 256, n_angular: int = 64) -> float:
    """Lower-bound mechanism: B(z) restricted to the window |theta - arg z| <= c theta0(r|z|).

    Radial Gauss-Legendre times Gauss-Legendre on each angular window.
    """
    from .quadrature import default_r_max, radial_nodes
    from scipy.special import logsumexp

    m = _m(ctx)
    _check_v_in_space(g, m)
    z = complex(z)
    x, phi = abs(z), math.atan2(z.imag, z.real)
    if x == 0:
        raise ValueError("window needs z != 0")
    gz = complex(g(z)).real
    lkzz = float(log_kernel_diag(m, z))
    mods = [abs(a) for a in g.coeffs]
    r_max = default_r_max(m, 1e-16, lambda r: 2 * (abs(gz) + sum(a * r ** j for j, a in enumerate(mods)))
                          + 2 * (r * x) ** m)
    r, wr = radial_nodes(1e-12, r_max, n_radial)
    tx, tw = np.polynomial.legendre.leggauss(n_angular)
    half = c * np.array([theta0(m, ri * x) for ri in r])
    half = np.minimum(half, math.pi)
    th = phi + half[:, None] * tx[None, :]
    w = r[:, None] * np.exp(1j * th)
    lk, _, _ = log_kernel(m, w, z)
    lv = 2.0 * (gz - np.real(g(w))) + 2.0 * lk - lkzz - (r ** (2 * m))[:, None]
    lw = np.log(wr * r * half)[:, None] + np.log(tw)[None, :]
    return float(logsumexp(lv + lw))


def worst_ray(g: PolynomialSymbol) -> float:
    """Smallest-|phi| angle with alpha_d + d phi = 0 mod 2 pi (ties go to phi > 0)."""
    d = g.degree
    if d < 1:
        raise ValueError("worst ray needs deg g >= 1")
    base = -g.leading_arg / d
    step = 2 * math.pi / d
    cands = [base + k * step for k in range(-d - 1, d + 2)]
    return min(cands, key=lambda p: (round(abs(p), 12), -p))


def closed_form_berezin_m1(a: complex, b: complex, z: complex) -> float:
    """m = 1: Berezin transform of |b e^{conj(a) z}|^2, |b|^2 e^{|a|^2 + 2 Re(conj(a) z)}."""
    a, b, z = complex(a), complex(b), complex(z)
    return abs(b) ** 2 * math.exp(abs(a) ** 2 + 2 * (a.conjugate() * z).real)


def closed_form_B_m1_quadratic(a: float, x: float) -> float:
    """m = 1, g = a z^2 with 0 <= a < 1/2, on the worst ray (real axis):
    B(x) = exp(4 a^2 x^2 / (1 + 2a)) / sqrt(1 - 4 a^2)."""
    if not 0 <= a < 0.5:
        raise ValueError("need 0 <= a < 1/2")
    return math.exp(4 * a * a * x * x / (1 + 2 * a)) / math.sqrt(1 - 4 * a * a)


def ray_sweep(g: PolynomialSymbol, ctx, xs, spec: QuadratureSpec = DEFAULT_SPEC,
              phi: float | None = None) -> RaySweep:
    """log B along z = x e^{i phi} (the worst ray by default)."""
    if phi is None:
        phi = worst_ray(g) if g.degree >= 1 else 0.0
    xs = np.asarray(xs, dtype=float)
    out = [log_curly_B(g, ctx, x * complex(math.cos(phi), math.sin(phi)), spec, with_err=True) for x in xs]
    return RaySweep(phi, xs, np.array([o[0] for o in out]), np.array([o[1] for o in out]))


def product_sweep(g: PolynomialSymbol, ctx, xs, spec: QuadratureSpec = DEFAULT_SPEC,
                  phi: float | None = None) -> RaySweep:
    """log(~|u|^2 ~|v|^2) for u = e^g, v = e^{-g} along a ray."""
    if phi is None:
        phi = worst_ray(g) if g.degree >= 1 else 0.0
    m = _m(ctx)
    _check_v_in_space(g, m)
    _check_v_in_space(-g, m)
    u = exp_taylor(g, max(g.degree, 1))
    v = exp_taylor(-g, max(g.degree, 1))
    vals = [berezin_product(u, v, m, x * complex(math.cos(phi), math.sin(phi)), spec, log=True) for x in xs]
    return RaySweep(phi, xs, np.array(vals))


def rate_target(m: float, d: int, a: float) -> tuple[float, float]:
    """(exponent p, coefficient A) of the predicted growth log B ~ A x^p on the worst ray.

    d = 2m: the minimum of (s - X)^2 - 2a(X^2 - s^2) over s = r^m is
    -4a^2 X^2/(1 + 2a) with X = x^m, so A = 4a^2/(1 + 2a), p = 2m.
    d < 2m: A = a^2 d^2 / m^2, p = 2d - 2m.
    """
    if d == 2 * m:
        return 2 * m, 4 * a * a / (1 + 2 * a)
    return 2 * d - 2 * m, a * a * d * d / (m * m)


@dataclass
class RateReport:
    m: float
    d: int
    a: float
    xs: list
    log_B: list
    est_rel_err: list
    fitted_rate: float
    target_rate: float
    fitted_exponent: float
    target_exponent: float
    bounded: bool | None
    pass_: bool
    saturated: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["pass"] = d.pop("pass_")
        return d


def _lsq_slope(x, y) -> float:
    A = np.vstack([x, np.ones_like(x)]).T
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def rate_check(g: PolynomialSymbol, ctx, spec: QuadratureSpec = DEFAULT_SPEC, xs=None,
               x_max: float | None = None, n: int = 10, bound_tol: float = 1e-3) -> RateReport:
    """Fit the growth of log B along the worst ray and compare with the predicted rate.

    Radii are geometric on [1, x_max]; points whose quadrature relative error
    exceeds 10% are dropped (saturation).  Slopes use the top half of the grid.
    """
    m = _m(ctx)
    d = g.degree
    if d > 2 * m:
        raise ValueError("rate_check needs d <= 2m")
    a = g.leading_modulus
    p, A = rate_target(m, d, a) if d >= 1 else (0.0, 0.0)
    if xs is None:
        if x_max is None:
            # keep the largest exponent near 300 in natural log
            x_max = max(2.0, min(8.0, (300.0 / max(A, 1e-3)) ** (1.0 / max(p, 1.0)))) if p > 0 else 6.0
        xs = np.geomspace(1.0, x_max, n)
    sweep = ray_sweep(g, m, xs, spec)
    ok = sweep.est_errs < 0.1
    xs_ok = sweep.xs[ok]
    lb = sweep.log_values[ok]
    top = slice(len(xs_ok) // 2, None)
    saturated = not np.all(ok)

    if d == 0 or d <= m:
        spread = float(np.max(lb) - np.min(lb)) if lb.size else math.inf
        fitted_exp = _lsq_slope(np.log(xs_ok[top]), lb[top]) if xs_ok.size > 3 else math.nan
        bounded = fitted_exp <= 0.1 or spread <= math.log1p(bound_tol)
        return RateReport(m, d, a, list(map(float, sweep.xs)), list(map(float, sweep.log_values)),
                          list(map(float, sweep.est_errs)), float(np.exp(spread)), 1.0,
                          fitted_exp, p, bounded, bool(bounded), saturated)

    # growth exponent from d log(log B) / d log x, coefficient from log B / x^p
    ll = np.log(np.maximum(lb[top], 1e-300))
    fitted_exp = _lsq_slope(np.log(xs_ok[top]), ll)
    fitted_rate = _lsq_slope(xs_ok[top] ** p, lb[top])
    if d == 2 * m:
        ratio = fitted_rate / A
    else:
        ratio = fitted_exp / p
    return RateReport(m, d, a, list(map(float, sweep.xs)), list(map(float, sweep.log_values)),
                      list(map(float, sweep.est_errs)), fitted_rate, A, fitted_exp, p, None,
                      bool(RATE_LO <= ratio <= RATE_HI), saturated)
