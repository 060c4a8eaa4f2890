"""Laplace-method estimates, the phase h_x behind the Berezin growth rate, and
numeric envelope checks for the integral inequalities used in the
boundedness proof and for the kernel's sector asymptotics.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import dawsn, erf

from .berezin import rate_target
from .quadrature import graded_nodes, integrate_line_log
from .special_fn import log_kernel, theta0

SQRT_2PI = math.sqrt(2 * math.pi)
# natural-log exponent beyond which envelope grid points are dropped and flagged
LOG_CAP = 600.0
# outer-sector checks start this factor past the sector edge pi/(2m)
OUTER_MARGIN = 1.5
# inner-window half-width: |K| stays above this fraction of its peak
WINDOW_LEVEL = 0.5
# a kernel relative error above this is reported as uncertain
KERNEL_ERR_FLAG = 1e-3
LEMMA_IDS = ("Eq8", "Lemma4a", "Lemma4b", "Lemma5I", "Lemma5J", "Lemma6I", "Lemma6J", "Lemma1")


def _workers() -> int:
    cap = os.environ.get("FOCKLAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _pmap(fn, items):
    items = list(items)
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- Laplace method

class LaplaceError(ValueError):
    pass


@dataclass(frozen=True)
class LaplaceProblem:
    """The integral of S(r) e^{-h(r)} over ``domain``.

    ``log_S`` may replace ``S`` when the amplitude over- or underflows.
    """

    h: Callable[[float], float]
    dh: Callable[[float], float]
    d2h: Callable[[float], float]
    domain: tuple
    S: Callable[[float], float] | None = None
    log_S: Callable[[float], float] | None = None
    x: float = math.nan

    def __post_init__(self):
        lo, hi = self.domain
        if not hi > lo:
            raise ValueError("domain must be a nonempty interval")
        if self.S is None and self.log_S is None:
            raise ValueError("need S or log_S")

    def log_amplitude(self, r):
        if self.log_S is not None:
            return self.log_S(r)
        with np.errstate(divide="ignore"):
            return np.log(self.S(r))


@dataclass(frozen=True)
class LaplaceEstimate:
    r_x: float
    c_x: float
    log_value: float
    h_min: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709 else math.inf


def safeguarded_newton(f: Callable, df: Callable, lo: float, hi: float, xtol: float = 1e-15,
                       ftol: float = 0.0, max_iter: int = 200) -> float:
    """Root of f in [lo, hi] with f(lo) < 0 < f(hi); Newton steps that leave
    the bracket or fail to shrink it fast enough fall back to bisection."""
    flo, fhi = f(lo), f(hi)
    if not (flo < 0 < fhi):
        raise LaplaceError("root is not bracketed")
    r = 0.5 * (lo + hi)
    width = hi - lo
    for _ in range(max_iter):
        fr = f(r)
        if fr == 0 or abs(fr) <= ftol:
            return r
        if fr < 0:
            lo = r
        else:
            hi = r
        d = df(r)
        step_ok = d > 0 and np.isfinite(d)
        cand = r - fr / d if step_ok else math.nan
        if not (lo < cand < hi) or hi - lo > 0.5 * width:
            cand = 0.5 * (lo + hi)
        width = hi - lo
        if abs(cand - r) <= xtol * max(1.0, abs(r)) or width <= xtol * max(1.0, abs(r)):
            return cand
        r = cand
    return r


def laplace_estimate(p: LaplaceProblem) -> LaplaceEstimate:
    """Leading Laplace approximation sqrt(2 pi) c^{-1/2} S(r_x) e^{-h(r_x)}, kept in logs."""
    lo, hi = p.domain
    if not (p.dh(lo) < 0 < p.dh(hi)):
        raise LaplaceError("h' does not bracket a minimum on the domain")
    r = safeguarded_newton(p.dh, p.d2h, lo, hi)
    c = float(p.d2h(r))
    if not c > 0:
        raise LaplaceError(f"degenerate phase: h''(r_x) = {c}")
    h_min = float(p.h(r))
    lv = math.log(SQRT_2PI) - 0.5 * math.log(c) + float(p.log_amplitude(np.array([r]))[0]) - h_min
    return LaplaceEstimate(float(r), c, lv, h_min)


def direct_log_integral(p: LaplaceProblem, rtol: float = 1e-10) -> float:
    """log of the integral itself by adaptive 1-D quadrature (the oracle for the estimate)."""
    lo, hi = p.domain

    def log_f(r):
        r = np.asarray(r, dtype=float)
        return p.log_amplitude(r) - np.vectorize(p.h, otypes=[float])(r)

    return integrate_line_log(log_f, lo, hi, rtol=rtol).log_value


def _xlog(p, r):
    """p log r with the convention 0 log 0 = 0."""
    if p == 0:
        return np.zeros_like(np.asarray(r, dtype=float))
    with np.errstate(divide="ignore"):
        return p * np.log(r)


# ------------------------------------------------------------------ phase h_x

@dataclass(frozen=True)
class HxAnalysis:
    m: float
    d: float
    a: float
    C: float
    x: float
    r_x: float
    h_min: float
    c_x: float
    rho_x: float
    tau_check: float

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("m", "d", "a", "C", "x", "r_x", "h_min", "c_x", "rho_x", "tau_check")}


def _hx_funcs(m, d, a, C, x):
    """h_x and its r-derivatives written in rho = r/x - 1 to avoid cancellation."""
    xm = x ** m

    def parts(rho):
        lg = math.log1p(rho)
        u = math.expm1(m * lg)          # (r^m - x^m) / x^m
        v = math.expm1(d * lg)          # (r^d - x^d) / x^d
        return u, v, x * (1 + rho)

    def h(rho):
        u, v, r = parts(rho)
        extra = C * (r ** (d - 1) + x ** (d - 1) + 1) if C else 0.0
        return xm * xm * u * u + 2 * a * x ** d * v + extra

    def dh(rho):
        u, v, r = parts(rho)
        g = 2 * m * r ** (m - 1) * xm * u + 2 * a * d * r ** (d - 1)
        if C:
            g += C * (d - 1) * r ** (d - 2)
        return g

    def d2h(rho):
        _, _, r = parts(rho)
        g = 2 * m * (2 * m - 1) * r ** (2 * m - 2) - 2 * m * (m - 1) * xm * r ** (m - 2)
        g += 2 * a * d * (d - 1) * r ** (d - 2)
        if C:
            g += C * (d - 1) * (d - 2) * r ** (d - 3)
        return g

    return h, dh, d2h


def _bracket(dh, lo, hi):
    """Sign change of dh in [lo, hi] (rho coordinates), widening from the
    default window toward rho -> -1 and outward when needed."""
    if dh(lo) < 0 < dh(hi):
        return lo, hi
    grid = np.concatenate([-1 + np.geomspace(1e-6, 1 + lo, 200), np.linspace(lo, hi, 200)[1:],
                           hi + np.geomspace(1e-3, 64.0, 100)])
    grid = np.unique(grid)
    vals = np.array([dh(g) for g in grid])
    idx = np.nonzero((vals[:-1] < 0) & (vals[1:] > 0))[0]
    if idx.size == 0:
        raise LaplaceError("no bracketed minimum of h_x")
    return float(grid[idx[-1]]), float(grid[idx[-1] + 1])


def hx_analyze(m: float, d: float, a: float, C: float, x: float) -> HxAnalysis:
    """Minimizer of h_x(r) = (r^m - x^m)^2 - 2a(x^d - r^d) + C(r^{d-1} + x^{d-1} + 1).

    ``rho_x`` is r_x / ((1+2a)^{-1/m} x) - 1 when d = 2m and r_x / x - 1
    otherwise.  ``tau_check`` is c_x tau_x^2 with tau_x = sqrt(r_x), which
    should grow with x.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    if not (1 <= d <= 2 * m):
        raise ValueError("need 1 <= d <= 2m")
    if a < 0 or C < 0:
        raise ValueError("a and C must be nonnegative")
    h, dh_r, d2h_r = _hx_funcs(m, d, a, C, x)
    # derivatives in rho are x times those in r
    lo, hi = _bracket(dh_r, -0.75, 3.0)
    if a == 0 and C == 0:
        rho = 0.0
    else:
        scale = 2 * m * x ** (2 * m - 1)
        rho = safeguarded_newton(dh_r, lambda q: x * d2h_r(q), lo, hi, ftol=1e-15 * scale)
    r_x = x * (1 + rho)
    c_x = d2h_r(rho)
    if not c_x > 0:
        raise LaplaceError(f"degenerate phase: h''(r_x) = {c_x}")
    if d == 2 * m:
        rho_rep = math.expm1(math.log1p(rho) + math.log1p(2 * a) / m)
    else:
        rho_rep = rho
    return HxAnalysis(m, d, a, C, x, r_x, h(rho), c_x, rho_rep, c_x * r_x)


def hx_problem(m: float, d: float, a: float, C: float, x: float) -> LaplaceProblem:
    """Lower-bound integrand (r x)^{-m/2} r^{2m-1} e^{-h_x(r)} as a Laplace problem in r."""
    h, dh, d2h = _hx_funcs(m, d, a, C, x)
    hi = x * 4.0 * max(1.0, (1 + 2 * a) ** (1 / m))

    def log_S(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return -0.5 * m * np.log(r * x) + (2 * m - 1) * np.log(r)

    return LaplaceProblem(h=lambda r: h(r / x - 1), dh=lambda r: dh(r / x - 1), d2h=lambda r: d2h(r / x - 1),
                          domain=(x * 1e-3, hi), log_S=log_S, x=x)


def hx_targets(m: float, d: float, a: float, x: float) -> dict:
    """Leading-order predictions for -h_min, c_x and the minimizer location."""
    p, A = rate_target(m, d, a)
    if d == 2 * m:
        c = 2 * m * m * (1 + 2 * a) ** (2 / m - 1) * x ** (2 * m - 2)
        return {"neg_h_min": A * x ** p, "c_x": c, "r_x": (1 + 2 * a) ** (-1 / m) * x, "rho_x": 0.0}
    return {"neg_h_min": A * x ** p, "c_x": 2 * m * m * x ** (2 * m - 2), "r_x": x,
            "rho_x": -(a * d / (m * m)) * x ** (d - 2 * m)}


@dataclass
class RateVerifyReport:
    m: float
    d: float
    a: float
    xs: list
    h_ratios: list
    c_ratios: list
    r_ratios: list
    tol: float
    pass_: bool
    monotone: bool

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("m", "d", "a", "xs", "h_ratios", "c_ratios", "r_ratios", "tol",
                                             "monotone")}
        d["pass"] = self.pass_
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "h_ratio", "c_ratio", "r_ratio"])
        for row in zip(self.xs, self.h_ratios, self.c_ratios, self.r_ratios):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def rate_verify(m: float, d: float, a: float, xs, tol: float = 0.10) -> RateVerifyReport:
    """Compare Newton minimizer data against the leading-order rates.

    ``r_ratios`` compare r_x with (1+2a)^{-1/m} x when d = 2m and rho_x with
    -(a d / m^2) x^{d-2m} otherwise.  Passes when all three ratios move
    monotonically toward 1 over the top half of the grid and end within
    ``tol`` of 1 at the largest x.
    """
    xs = [float(v) for v in xs]
    if any(b <= a_ for a_, b in zip(xs, xs[1:])):
        raise ValueError("xs must be increasing")
    if a <= 0:
        raise ValueError("a must be positive")
    hr, cr, rr = [], [], []
    for x in xs:
        t = hx_targets(m, d, a, x)
        if max(x ** (2 * m), abs(t["neg_h_min"])) > math.exp(LOG_CAP):
            raise OverflowError(f"x = {x} is outside the overflow-safe range")
        res = hx_analyze(m, d, a, 0.0, x)
        hr.append(-res.h_min / t["neg_h_min"])
        cr.append(res.c_x / t["c_x"])
        if d == 2 * m:
            rr.append(res.r_x / t["r_x"])
        else:
            rr.append(res.rho_x / t["rho_x"])
    top = len(xs) // 2
    mono = all(abs(s[i + 1] - 1) <= abs(s[i] - 1) + 1e-12 for s in (hr, cr, rr) for i in range(top, len(s) - 1))
    ok = mono and all(abs(s[-1] - 1) <= tol for s in (hr, cr, rr))
    return RateVerifyReport(m, d, a, xs, hr, cr, rr, tol, ok, mono)


# -------------------------------------------------------------- integral I(a)

def log_integral_I(m: float, d: float, N: float, a: float, rtol: float = 1e-11) -> float:
    """log of the integral of e^{-r^{2m}/2 + a r^d} r^N over (0, inf)."""
    if not m > 0 or N <= -1 or a < 0 or d < 0:
        raise ValueError("need m > 0, N > -1, a >= 0, d >= 0")

    def log_f(r):
        with np.errstate(divide="ignore"):
            return -0.5 * r ** (2 * m) + a * r ** d + _xlog(N, r)

    return integrate_line_log(log_f, 0.0, math.inf, rtol=rtol).log_value


def integral_I(m: float, d: float, N: float, a: float) -> float:
    lv = log_integral_I(m, d, N, a)
    return math.exp(lv) if lv < 709 else math.inf


# ---------------------------------------------------------- envelope reports

@dataclass
class EnvelopeReport:
    lemma_id: str
    m: float
    grid: list
    ratios: list
    fitted_constant: float
    pass_: bool
    flags: list = field(default_factory=list)
    drift: float | None = None
    stable: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lemma_id": self.lemma_id, "m": self.m, "grid": self.grid,
                "ratios": [float(r) for r in self.ratios], "fitted_constant": float(self.fitted_constant),
                "pass": bool(self.pass_), "flags": list(self.flags), "drift": self.drift,
                "stable": self.stable, "extra": self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "ratio"])
        for pt, r in zip(self.grid, self.ratios):
            w.writerow([";".join(f"{k}={v:g}" for k, v in pt.items()), repr(float(r))])
        return buf.getvalue()


def _log_env(a, expo):
    return expo * math.log1p(a)


def _lemma_eq8(m, pt):
    a, d, N = pt["a"], pt["d"], pt["N"]
    lhs = log_integral_I(m, d, N, a)
    env = _log_env(a, max(0.0, (N + 1) / m - 1)) + a * a / 2
    return lhs, env, 0.0


# fixed parameters of the Lemma4a integral
L4_DELTA = 0.5
L4_P = 1.0
L4_R = 1.0


def _lemma_4a(m, pt):
    a, d, x, N = pt["a"], pt["d"], pt["x"], pt["N"]
    dl, p, R = L4_DELTA, L4_P, L4_R
    x2m = x ** (2 * m)

    def log_f(r):
        with np.errstate(divide="ignore"):
            return -0.5 * x2m * (1 + r ** (2 * m)) + a * x ** d * (1 + dl * r ** d) + _xlog(N, r)

    lhs = (N + 1 - p) * math.log(x) + integrate_line_log(log_f, R / x ** 2).log_value
    env = _log_env(a, max(0.0, (N + p + 1) / m - 1)) + 0.5 * (1 + dl * dl) * a * a
    return lhs, env, 0.0


def _lemma_4b(m, pt):
    a, d, x = pt["a"], pt["d"], pt["x"]
    x2m = x ** (2 * m)

    def log_f(r):
        with np.errstate(divide="ignore"):
            return -0.5 * x2m * (1 - r ** m) ** 2 + a * x ** d * (1 - r ** d) + 0.5 * m * np.log(r)

    lhs = m * math.log(x) + integrate_line_log(log_f, L4_R / x ** 2).log_value
    env = math.log1p(a) + 0.5 * a * a
    return lhs, env, 0.0


def _log_int01(s):
    """log of the integral of e^{-s t^2} over [0, 1], any real s."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 1e-12
    neg = s < -1e-12
    sp = np.sqrt(np.abs(s))
    out[pos] = np.log(0.5 * math.sqrt(math.pi) * erf(sp[pos]) / sp[pos])
    out[neg] = np.abs(s[neg]) + np.log(dawsn(sp[neg]) / sp[neg])
    return out


def _sector_I(m, d, a, x, r, panels=12):
    """log I(x, r) for arrays r: the principal-sector angular integral."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    xr = x * r
    T = math.pi / (2 * m)
    th, wt = graded_nodes(0.0, T, 0.25 * xr ** (-m / 2) / m, panels)
    la, _, er = log_kernel(m, x, r[:, None] * np.exp(1j * th))
    lf = -(xr ** m)[:, None] + 2 * a * (r ** d)[:, None] * np.sin(th * d / 2) ** 2 + la
    terms = lf + np.log(wt)
    mx = terms.max(axis=1, keepdims=True)
    wsum = np.exp(terms - mx)
    val = math.log(2) + mx[:, 0] + np.log(wsum.sum(axis=1))
    err = (wsum * er).sum(axis=1) / wsum.sum(axis=1)
    return val, err


def _sector_J(m, x, r, panels=12):
    """log of the outer-sector integral of |K_m(x, r e^{i theta})| (no prefactor)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    xr = x * r
    T = math.pi / (2 * m)
    if T >= math.pi:
        return np.full(r.shape, -np.inf), np.zeros(r.shape)
    th, wt = graded_nodes(T, math.pi, 0.25 * xr ** (-m) / m, panels)
    la, _, er = log_kernel(m, x, r[:, None] * np.exp(1j * th))
    terms = la + np.log(wt)
    mx = terms.max(axis=1, keepdims=True)
    wsum = np.exp(terms - mx)
    val = math.log(2) + mx[:, 0] + np.log(wsum.sum(axis=1))
    err = (wsum * er).sum(axis=1) / wsum.sum(axis=1)
    return val, err


def _lemma_5I(m, pt):
    a, d, x, r = pt["a"], pt["d"], pt["x"], pt["r"]
    val, err = _sector_I(m, d, a, x, r)
    xr = x * r
    env = (m - 1) * math.log(xr) + float(_log_int01(np.array([xr ** m - a * r ** d]))[0])
    return float(val[0]), env, float(err[0])


def _lemma_5J(m, pt):
    x, r = pt["x"], pt["r"]
    val, err = _sector_J(m, x, r)
    # the common factor e^{-(xr)^m + a(x^d + r^d)} cancels
    return float(val[0]), -math.log(x * r), float(err[0])


L6_R = 1.0


def _l6_upper(m, d, a, x, drop=60.0):
    """Radius beyond which both Lemma6 integrands (I and J) are below e^{-drop} of their size at r = x."""
    def slack(r):
        return 0.5 * (r ** m - x ** m) ** 2 - a * (x ** d + r ** d) - (m + 1) * math.log1p(x * r) - drop

    r = max(2.0 * x, 2.0)
    while slack(r) < 0:
        r *= 1.25
    return r


def _lemma_6(m, pt, which):
    a, d, x = pt["a"], pt["d"], pt["x"]
    errs = []

    def log_f(r):
        r = np.asarray(r, dtype=float)
        base = -0.5 * (x ** m - r ** m) ** 2 + np.log(r)
        if which == "I":
            v, e = _sector_I(m, d, a, x, r)
            base = base + a * (x ** d - r ** d) + v
        else:
            v, e = _sector_J(m, x, r)
            base = base - (x * r) ** m + a * (x ** d + r ** d) + v
        errs.append(float(np.max(e, initial=0.0)))
        return base

    lhs = integrate_line_log(log_f, L6_R / x, _l6_upper(m, d, a, x), rtol=1e-7, n_scan=128).log_value
    if which == "I":
        env = _log_env(a, 1 / m - 1) + a * a
    else:
        env = _log_env(a, max(0.0, 2 / m - 1)) + a * a
    return lhs, env, max(errs)


_LEMMAS = {
    "Eq8": (_lemma_eq8, ("a", "d", "N")),
    "Lemma4a": (_lemma_4a, ("a", "d", "x", "N")),
    "Lemma4b": (_lemma_4b, ("a", "d", "x")),
    "Lemma5I": (_lemma_5I, ("a", "d", "x", "r")),
    "Lemma5J": (_lemma_5J, ("x", "r")),
    "Lemma6I": (lambda m, pt: _lemma_6(m, pt, "I"), ("a", "d", "x")),
    "Lemma6J": (lambda m, pt: _lemma_6(m, pt, "J"), ("a", "d", "x")),
}
# axes that get midpoints under refinement
_CONTINUOUS = ("a", "x", "r")


def default_grid(lemma_id: str, m: float) -> dict:
    """Parameter axes used by the CLI and the acceptance suite."""
    ds = sorted({1.0, float(m)}) if m >= 1 else [float(m)]
    if lemma_id == "Eq8":
        return {"a": list(np.linspace(0, 8, 9)), "d": ds, "N": [0.0, 1.0, 3.0]}
    if lemma_id == "Lemma4a":
        return {"a": list(np.linspace(0, 4, 9)), "d": ds, "x": list(np.linspace(0.5, 3, 11)), "N": [1.0]}
    if lemma_id == "Lemma4b":
        return {"a": list(np.linspace(0, 4, 9)), "d": ds, "x": list(np.linspace(0.5, 3, 11))}
    if lemma_id == "Lemma5I":
        return {"a": [0.0, 0.5, 1.0], "d": ds, "x": [2.0, 4.0], "r": [2.5, 5.0, 10.0]}
    if lemma_id == "Lemma5J":
        return {"x": [2.0, 4.0], "r": [2.5, 5.0, 10.0]}
    if lemma_id in ("Lemma6I", "Lemma6J"):
        xs = [1.0, 2.0, 4.0, 6.0] if m == 1 else [1.0, 2.0, 3.0]
        return {"a": [0.0, 1.0, 2.0, 3.0, 4.0], "d": [1.0], "x": xs}
    raise ValueError(f"unknown lemma id {lemma_id!r}")


def refine_grid(axes: dict) -> dict:
    out = {}
    for k, vals in axes.items():
        vals = sorted(float(v) for v in vals)
        if k in _CONTINUOUS and len(vals) > 1:
            mids = [0.5 * (u + v) for u, v in zip(vals, vals[1:])]
            vals = sorted(vals + mids)
        out[k] = vals
    return out


def _points(axes: dict, names) -> list:
    missing = [n for n in names if n not in axes]
    if missing:
        raise ValueError(f"grid lacks axes {missing}")
    keys = list(names)
    return [dict(zip(keys, map(float, combo))) for combo in itertools.product(*(axes[k] for k in keys))]


def _evaluate(lemma_id, m, axes):
    fn, names = _LEMMAS[lemma_id]
    pts = _points(axes, names)
    flags = set()
    kept = []
    if lemma_id.startswith("Lemma5") or lemma_id.startswith("Lemma6"):
        if m < 1 and lemma_id.startswith("Lemma6"):
            raise ValueError("Lemma6I/Lemma6J require m >= 1")
    for pt in pts:
        if "d" in pt and pt["d"] > m + 1e-12:
            raise ValueError("envelope lemmas need d <= m")
        if lemma_id.startswith("Lemma5") and pt["x"] * pt["r"] <= 1.0:
            raise ValueError("Lemma5I/Lemma5J need x r > R = 1")
        kept.append(pt)
    results = _pmap(lambda pt: fn(m, pt), kept)
    grid, ratios = [], []
    for pt, (lhs, env, err) in zip(kept, results):
        if max(abs(lhs), abs(env)) > LOG_CAP:
            flags.add("capped")
            continue
        if err > KERNEL_ERR_FLAG:
            flags.add("kernel_uncertain")
        grid.append(pt)
        ratios.append(math.exp(lhs - env))
    return grid, ratios, flags


def envelope_verify(lemma_id: str, m: float, grid: dict | None = None, refine: bool = True,
                    drift_tol: float = 0.10) -> EnvelopeReport:
    """Ratio of each inequality's left side to its claimed envelope over a grid.

    ``grid`` maps axis names to values (tensor product).  The fitted constant
    is the largest ratio; with ``refine`` the grid is rerun with midpoints
    inserted and the relative change of the constant is reported as drift.
    """
    if lemma_id == "Lemma1":
        return kernel_sector_verify(m, grid)
    if lemma_id not in _LEMMAS:
        raise ValueError(f"unknown lemma id {lemma_id!r}")
    axes = grid if grid is not None else default_grid(lemma_id, m)
    pts, ratios, flags = _evaluate(lemma_id, m, axes)
    if not ratios:
        raise ValueError("no grid point inside the overflow-safe range")
    C = max(ratios)
    if lemma_id.startswith("Lemma4"):
        flags.add("reconstructed")
    drift = stable = None
    extra = {"axes": {k: [float(v) for v in vals] for k, vals in axes.items()}}
    if refine:
        _, r2, f2 = _evaluate(lemma_id, m, refine_grid(axes))
        flags |= f2
        C2 = max(r2)
        drift = abs(C2 - C) / C if C > 0 else math.inf
        stable = drift < drift_tol
        extra["refined_constant"] = C2
    if lemma_id == "Eq8":
        extra["log_I_over_a2"] = _eq8_growth(m, pts)
    ok = bool(np.isfinite(C) and all(np.isfinite(ratios)))
    return EnvelopeReport(lemma_id, float(m), pts, ratios, float(C), ok, sorted(flags), drift, stable, extra)


def _eq8_growth(m, pts):
    amax = max(p["a"] for p in pts)
    if amax <= 0:
        return None
    return log_integral_I(m, 1.0, 1.0, amax) / amax ** 2


# ------------------------------------------------------------------ Lemma1 (kernel sectors)

def _window_c(m, x, r):
    """Largest c with |K(x, r e^{i theta})| >= WINDOW_LEVEL |K(x, r)| for |theta| <= c theta0(xr)."""
    t0 = theta0(m, x * r)
    la0 = float(log_kernel(m, x, r)[0])
    target = la0 + math.log(WINDOW_LEVEL)

    def above(c):
        th = np.linspace(0.0, c * t0, 33)
        la = log_kernel(m, x, r * np.exp(1j * th))[0]
        return bool(np.all(la >= target))

    lo, hi = 0.0, 1.0
    while above(hi) and hi < 64:
        lo, hi = hi, 2 * hi
    if hi >= 64:
        return hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if above(mid):
            lo = mid
        else:
            hi = mid
    return lo


def default_sector_grid(m: float) -> dict:
    return {"x": [1.5, 2.5, 4.0], "r": [1.5, 2.5, 4.0],
            "theta": list(np.linspace(-math.pi * 0.98, math.pi * 0.98, 25)) + [0.0, 0.01]}


def kernel_sector_verify(m: float, grid: dict | None = None) -> EnvelopeReport:
    """Sector estimates for |K_m(x, r e^{i theta})|.

    principal (|theta| <= pi/(2m)): ratio to (xr)^{m-1} e^{(xr)^m cos(m theta)};
    outer (|theta| >= 1.5 pi/(2m)): ratio |K| x r;
    inner window: fitted c such that |K| stays within a factor WINDOW_LEVEL of
    its peak for |theta| <= c theta0(xr), and the lower constant of
    |K| / ((xr)^{m-1} e^{(xr)^m}) there.
    """
    axes = grid if grid is not None else default_sector_grid(m)
    xs, rs, ths = axes["x"], axes["r"], axes["theta"]
    T = math.pi / (2 * m)
    pts, ratios, kinds = [], [], []
    flags = set()
    lows = []
    c_fit = math.inf
    for x in xs:
        for r in rs:
            x, r = float(x), float(r)
            xr = x * r
            th = np.asarray(ths, dtype=float)
            la, _, er = log_kernel(m, x, r * np.exp(1j * th))
            if np.any(er > KERNEL_ERR_FLAG):
                flags.add("kernel_uncertain")
            c_pt = _window_c(m, x, r)
            c_fit = min(c_fit, c_pt)
            for t, l in zip(th, la):
                pt = {"x": x, "r": r, "theta": float(t)}
                if abs(t) <= T:
                    lr = l - (m - 1) * math.log(xr) - xr ** m * math.cos(m * t)
                    kind = "principal"
                elif abs(t) >= OUTER_MARGIN * T:
                    lr = l + math.log(xr)
                    kind = "outer"
                else:
                    continue
                if abs(l) > LOG_CAP:
                    flags.add("capped")
                    continue
                pts.append(dict(pt, kind=kind))
                ratios.append(math.exp(lr))
                kinds.append(kind)
                if abs(t) <= c_pt * theta0(m, xr):
                    lows.append(math.exp(l - (m - 1) * math.log(xr) - xr ** m))
    prin = [q for q, k in zip(ratios, kinds) if k == "principal"]
    outer = [q for q, k in zip(ratios, kinds) if k == "outer"]
    C = max(ratios)
    extra = {"principal_constant": max(prin) if prin else None,
             "outer_constant": max(outer) if outer else None,
             "window_c": c_fit, "window_level": WINDOW_LEVEL,
             "lower_constant": min(lows) if lows else None,
             "outer_margin": OUTER_MARGIN}
    ok = bool(np.isfinite(C) and c_fit > 0 and (not lows or min(lows) > 0))
    grid_out = [{k: v for k, v in p.items() if k != "kind"} for p in pts]
    extra["kinds"] = kinds
    return EnvelopeReport("Lemma1", float(m), grid_out, ratios, float(C), ok, sorted(flags), None, None, extra)
