"""Log-gamma, the Mittag-Leffler function E_{1/m,1/m} and the F^2_m kernel.

All evaluations are carried as ``(log_abs, phase)`` pairs internally so that
kernel values like ``K_m(z, z) ~ exp(|z|^{2m})`` never overflow.  The public
scalar helpers wrap the vectorized ``*_log`` routines.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import log_ndtr, rgamma

EPS = np.finfo(float).eps

SERIES = "series"
ASYMPTOTIC_PRINCIPAL = "asymptotic_principal"
ASYMPTOTIC_OSCILLATORY = "asymptotic_oscillatory"
OSCILLATORY_SERIES = "oscillatory_series"
_BRANCH_NAMES = (SERIES, ASYMPTOTIC_PRINCIPAL, ASYMPTOTIC_OSCILLATORY, OSCILLATORY_SERIES)


# ---------------------------------------------------------------------------
# log-gamma
# ---------------------------------------------------------------------------

_EULER_GAMMA = 0.57721566490153286061
_HALF_LOG_2PI = 0.91893853320467274178
# B_2k / (2k (2k-1)) for the Stirling tail
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
_BERNOULLI_EVEN = (1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66, -691.0 / 2730, 7.0 / 6)


def _zeta_int(k: int, n: int = 12) -> float:
    """Riemann zeta at an integer k >= 2 by Euler-Maclaurin."""
    head = math.fsum(j ** (-float(k)) for j in range(1, n))
    tail = [n ** (1.0 - k) / (k - 1), 0.5 * n ** (-float(k))]
    rising = float(k)
    for j, b in enumerate(_BERNOULLI_EVEN, start=1):
        tail.append(b / math.factorial(2 * j) * rising * n ** (-k - 2 * j + 1.0))
        rising *= (k + 2 * j - 1) * (k + 2 * j)
    return head + math.fsum(tail)


# lnGamma(1+e) = -gamma*e + sum_{k>=2} (-1)^k zeta(k) e^k / k, |e| <= 1/2
_LG1_COEFFS = np.array(
    [0.0, -_EULER_GAMMA] + [(-1) ** k * _zeta_int(k) / k for k in range(2, 64)]
)


def _lgamma_near_one(eps: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(eps, _LG1_COEFFS)


def log_gamma(x):
    """Natural log of Gamma for positive real ``x`` (scalar or array).

    Relative error is below 1e-13 on [0.1, 200].  Uses a Taylor series about
    1 and 2 (where ln Gamma vanishes), upward recurrence and Stirling's series.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("log_gamma requires x > 0")
    out = np.empty_like(arr)

    small = arr < 0.5
    near1 = (arr >= 0.5) & (arr <= 1.5)
    near2 = (arr > 1.5) & (arr <= 2.5)
    mid = (arr > 2.5) & (arr < 10.0)
    big = arr >= 10.0

    if np.any(small):
        xs = arr[small]
        out[small] = _lgamma_near_one(xs) - np.log(xs)
    if np.any(near1):
        out[near1] = _lgamma_near_one(arr[near1] - 1.0)
    if np.any(near2):
        e = arr[near2] - 2.0
        out[near2] = np.log1p(e) + _lgamma_near_one(e)
    if np.any(mid):
        xm = arr[mid]
        shift = np.ceil(10.0 - xm)
        prod = np.ones_like(xm)
        for i in range(int(shift.max())):
            prod = np.where(i < shift, prod * (xm + i), prod)
        out[mid] = _stirling(xm + shift) - np.log(prod)
    if np.any(big):
        out[big] = _stirling(arr[big])

    if np.ndim(x) == 0:
        return float(out)
    return out


def _stirling(x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    inv2 = inv * inv
    corr = np.zeros_like(x)
    for c in reversed(_STIRLING):
        corr = corr * inv2 + c
    return (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + corr * inv


# ---------------------------------------------------------------------------
# Mittag-Leffler E_{1/m,1/m}
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MittagLeflerParams:
    """Evaluation settings for E_{1/m,1/m}.

    ``switch_radius=None`` means "use the calibrated default for this m".
    Below the switch radius only the series is evaluated; above it the
    large-argument expansion is tried first and the series is used instead
    whenever its own error estimate is smaller.
    """

    m: float
    series_tol: float = 1e-17
    switch_radius: float | None = None

    def __post_init__(self):
        if not self.m >= 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not self.series_tol > 0:
            raise ValueError("series_tol must be positive")
        if self.switch_radius is not None and not self.switch_radius > 0:
            raise ValueError("switch_radius must be positive")

    @property
    def radius(self) -> float:
        if self.switch_radius is not None:
            return self.switch_radius
        return calibrated_switch_radius(self.m)


@dataclass(frozen=True)
class KernelValue:
    """A Mittag-Leffler or kernel value with its log-scaled representation.

    ``value`` is NaN when ``exp(log_abs)`` does not fit in a double
    (``saturated``); ``log_abs`` and ``phase`` are always usable.
    """

    value: complex
    branch: str
    est_rel_err: float
    log_abs: float
    phase: float
    saturated: bool = False


@lru_cache(maxsize=None)
def _lgamma_table(m: float, n: int) -> np.ndarray:
    return log_gamma((np.arange(n) + 1.0) / m)


@lru_cache(maxsize=None)
def _asym_coeffs(m: float, kmax: int = 60) -> np.ndarray:
    # coefficient of -z^{-k}: 1/Gamma((1-k)/m), exactly zero at the poles
    return np.array([0.0] + [float(rgamma((1.0 - k) / m)) for k in range(1, kmax + 1)])


def _neumaier(s, c, t):
    tot = s + t
    c = c + np.where(np.abs(s) >= np.abs(t), (s - tot) + t, (t - tot) + s)
    return tot, c


def _series(zeta: np.ndarray, m: float, tol: float):
    """Compensated power series in log-scaled form.

    Returns ``(log_abs, phase, est_rel_err)``.
    """
    with np.errstate(divide="ignore"):
        la = np.log(np.abs(zeta))
    th = np.angle(zeta)
    rad_m = np.exp(m * la)
    kstar = np.clip(np.rint(m * rad_m - 1.0), 0, None)
    kmax_needed = int(kstar.max(initial=0.0)) + 60 + int(8 * math.sqrt(m * (kstar.max(initial=0.0) + 1)))
    lg = _lgamma_table(float(m), kmax_needed + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(np.isfinite(la), kstar * la, 0.0) - lg[kstar.astype(int)]
    n = zeta.size
    sr = np.zeros(n)
    cr = np.zeros(n)
    si = np.zeros(n)
    ci = np.zeros(n)
    sabs = np.zeros(n)
    quiet = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for k in range(kmax_needed + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        if k == 0:
            logt = -lg[0] - shift[idx]
        else:
            with np.errstate(invalid="ignore"):
                logt = k * la[idx] - lg[k] - shift[idx]
            logt = np.where(np.isfinite(logt), logt, -np.inf)
        mag = np.exp(logt)
        tr = mag * np.cos(k * th[idx])
        ti = mag * np.sin(k * th[idx])
        sr[idx], cr[idx] = _neumaier(sr[idx], cr[idx], tr)
        si[idx], ci[idx] = _neumaier(si[idx], ci[idx], ti)
        sabs[idx] += mag
        cur = np.hypot(sr[idx] + cr[idx], si[idx] + ci[idx])
        small = mag <= tol * cur
        quiet[idx] = np.where(small, quiet[idx] + 1, 0)
        done = (quiet[idx] >= 3) & (k > kstar[idx])
        active[idx[done]] = False
    total = (sr + cr) + 1j * (si + ci)
    mod = np.abs(total)
    with np.errstate(divide="ignore"):
        log_abs = np.log(mod) + shift
    # heuristic: rounding of each log-evaluated term, amplified by cancellation
    term_err = EPS * (8.0 + 2.0 * np.abs(shift) + np.abs(kstar * np.where(np.isfinite(la), la, 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(mod > 0, term_err * sabs / mod, np.inf)
    err = np.where(active, np.maximum(err, 1.0), err)
    return log_abs, np.angle(total), err


def _asymptotic(zeta: np.ndarray, m: float):
    """Large-|z| expansion of E_{1/m,1/m} with optimal truncation.

    E ~ m z^{m-1} exp(z^m) [kept while m|arg z| <= pi]
        - sum_k z^{-k} / Gamma((1-k)/m).
    Returns ``(log_abs, phase, est_rel_err)``.
    """
    with np.errstate(divide="ignore"):
        la = np.log(np.abs(zeta))
    th = np.angle(zeta)
    logz = la + 1j * th
    zm = np.exp(m * logz)
    log_e = math.log(m) + (m - 1.0) * la + zm.real
    ph_e = (m - 1.0) * th + zm.imag
    # Berry's smoothing of the Stokes jump at m|arg z| = pi: the exponential
    # carries the multiplier erfc(-sigma)/2, sigma > 0 on the principal side
    if m == 1.0:
        log_mult = np.zeros_like(la)
        switch_log = np.full_like(la, -np.inf)
    else:
        dphi = np.clip(math.pi - m * np.abs(th), -math.pi, math.pi)
        sigma = math.sqrt(2.0) * np.exp(0.5 * m * la) * np.sin(0.5 * dphi)
        log_mult = log_ndtr(math.sqrt(2.0) * sigma)
        # the leading-order multiplier is off by O(|z|^{-m/2}) of the switched part
        switch_log = log_e + log_ndtr(-math.sqrt(2.0) * np.abs(sigma)) - 0.5 * m * la
    log_e = log_e + log_mult
    keep = log_e > -np.inf

    coeffs = _asym_coeffs(float(m))
    ks = np.arange(coeffs.size)
    nz = coeffs != 0.0
    if np.any(nz):
        with np.errstate(divide="ignore"):
            logc = np.where(nz, np.log(np.abs(coeffs)), -np.inf)
        # term_k = -c_k z^{-k}, magnitudes (n, K)
        logmag = logc[None, :] - ks[None, :] * la[:, None]
        logmag[:, 0] = -np.inf
        kopt = np.argmin(np.where(nz[None, :], logmag, np.inf), axis=1)
        omitted_log = logmag[np.arange(zeta.size), kopt]
        use = ks[None, :] < kopt[:, None]
        terms = -coeffs[None, :] * np.exp(-ks[None, :] * logz[:, None])
        terms[:, 0] = 0.0
        power = np.sum(np.where(use, terms, 0.0), axis=1)
    else:
        omitted_log = np.full(zeta.size, -np.inf)
        power = np.zeros(zeta.size, dtype=complex)

    with np.errstate(divide="ignore"):
        log_p = np.log(np.abs(power))
    lead = np.where(keep, log_e, -np.inf)
    scale = np.maximum(lead, log_p)
    scale = np.where(np.isfinite(scale), scale, 0.0)
    mant = np.where(keep, np.exp(lead - scale + 1j * ph_e), 0.0) + power * np.exp(-scale)
    mod = np.abs(mant)
    err_abs = np.exp(omitted_log - scale) + np.exp(switch_log - scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(mod > 0, err_abs / mod + 4 * EPS * (1 + np.abs(zm)), np.inf)
        log_abs = np.log(mod) + scale
    return log_abs, np.angle(mant), err


_calib_lock = threading.Lock()
_calib_cache: dict[float, float] = {}

# A worst-direction condition number above this hands over to the expansion.
COND_LIMIT = 1e2


def calibrated_switch_radius(m: float) -> float:
    """Smallest |z| where the series on the negative axis has condition
    number (sum |t_k| / |sum t_k|) above ``COND_LIMIT``.  Cached per m."""
    m = float(m)
    with _calib_lock:
        if m in _calib_cache:
            return _calib_cache[m]
        radii = np.linspace(0.05, 40.0 ** (1.0 / m), 800)
        la = np.log(radii)
        lg = _lgamma_table(m, 4000)
        ks = np.arange(4000)
        logt = ks[None, :] * la[:, None] - lg[None, :]
        peak = logt.max(axis=1)
        terms = np.exp(logt - peak[:, None]) * np.where(ks % 2 == 0, 1.0, -1.0)[None, :]
        sabs = np.exp(logt - peak[:, None]).sum(axis=1)
        ser = np.abs(terms.sum(axis=1))
        cond = sabs / np.maximum(ser, 1e-300)
        over = np.nonzero(cond > COND_LIMIT)[0]
        radius = float(radii[over[0]]) if over.size else float(radii[-1])
        _calib_cache[m] = radius
        return radius


def ml_log(zeta, m: float, series_tol: float = 1e-17, switch_radius: float | None = None):
    """Vectorized log-scaled E_{1/m,1/m}.

    Returns arrays ``(log_abs, phase, est_rel_err, branch_code)`` where the
    branch code indexes ``SERIES, ASYMPTOTIC_PRINCIPAL,
    ASYMPTOTIC_OSCILLATORY, OSCILLATORY_SERIES``.
    """
    z = np.atleast_1d(np.asarray(zeta, dtype=complex)).ravel()
    m = float(m)
    rsw = calibrated_switch_radius(m) if switch_radius is None else switch_radius
    n = z.size
    log_abs = np.empty(n)
    phase = np.empty(n)
    err = np.full(n, np.inf)
    code = np.zeros(n, dtype=int)
    absz = np.abs(z)
    principal = np.abs(np.angle(z)) <= math.pi / (2 * m)

    far = absz > rsw
    if np.any(far):
        la, ph, er = _asymptotic(z[far], m)
        log_abs[far], phase[far], err[far] = la, ph, er
        code[far] = np.where(principal[far], 1, 2)
    # the series' rounding error is about eps * e^{|z|^m} / |E|; skip it where
    # that cannot beat the expansion
    with np.errstate(over="ignore"):
        series_pred = EPS * (np.exp(np.minimum(absz ** m - np.where(far, log_abs, 0.0), 700.0))
                             + 4.0 * (1.0 + absz ** m))
    want_series = ~far | ((err > 1e-13) & (series_pred < err))
    if np.any(want_series):
        la, ph, er = _series(z[want_series], m, series_tol)
        better = er < err[want_series]
        idx = np.nonzero(want_series)[0][better]
        log_abs[idx], phase[idx], err[idx] = la[better], ph[better], er[better]
        code[idx] = np.where(far[idx] & ~principal[idx], 3, 0)
    shape = np.shape(zeta)
    return (log_abs.reshape(shape), phase.reshape(shape), err.reshape(shape), code.reshape(shape))


def _to_value(log_abs: float, phase: float, err: float, code: int) -> KernelValue:
    if log_abs > 709.0:
        return KernelValue(complex("nan+nanj"), _BRANCH_NAMES[code], float(err), float(log_abs), float(phase), True)
    mag = math.exp(log_abs) if np.isfinite(log_abs) else 0.0
    val = complex(mag * math.cos(phase), mag * math.sin(phase))
    return KernelValue(val, _BRANCH_NAMES[code], float(err), float(log_abs), float(phase), False)


def mittag_leffler(params: MittagLeflerParams, z: complex) -> KernelValue:
    """E_{1/m,1/m}(z) with branch and error estimate."""
    la, ph, er, code = ml_log(complex(z), params.m, params.series_tol, params.radius)
    return _to_value(float(la), float(ph), float(er), int(code))


# ---------------------------------------------------------------------------
# reproducing kernel
# ---------------------------------------------------------------------------

def _m_of(ctx) -> float:
    return float(getattr(ctx, "m", ctx))


def _zeta(z, w):
    # z conj(w) from separate real products so that swapping z and w gives the
    # exact conjugate (fused complex multiplies do not)
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    re = z.real * w.real + z.imag * w.imag
    im = z.imag * w.real - z.real * w.imag
    return re + 1j * im


def log_kernel(m: float, z, w):
    """Vectorized ``log|K_m(z, w)|``, ``arg K_m(z, w)`` and relative error."""
    m = float(m)
    la, ph, er, _ = ml_log(_zeta(z, w), m)
    return la + math.log(m / math.pi), ph, er


def log_kernel_diag(m: float, x):
    """``log K_m(x, x)`` for real or complex x (the diagonal is real, > 0)."""
    m = float(m)
    r2 = np.abs(np.asarray(x, dtype=complex)) ** 2
    la, _, _, _ = ml_log(r2.astype(complex), m)
    return la + math.log(m / math.pi)


def kernel(ctx, z: complex, w: complex) -> KernelValue:
    """K_m(z, w) = (m/pi) E_{1/m,1/m}(z conj(w))."""
    m = _m_of(ctx)
    la, ph, er, code = ml_log(_zeta(complex(z), complex(w)), m)
    return _to_value(float(la) + math.log(m / math.pi), float(ph), float(er), int(code))


def kernel_diag_asymptotic(ctx, x: float, log: bool = False) -> float:
    """Leading approximation (m^2/pi) x^{2(m-1)} exp(x^{2m}) to K_m(x, x)."""
    if not x > 0:
        raise ValueError("x must be positive")
    m = _m_of(ctx)
    lv = 2 * math.log(m) - math.log(math.pi) + 2 * (m - 1) * math.log(x) + x ** (2 * m)
    if log:
        return lv
    return math.exp(lv) if lv < 709.0 else math.inf


def theta0(m: float, r: float) -> float:
    """Angular window width r^{-m/2}/m of the kernel's principal peak."""
    if not r > 0:
        raise ValueError("r must be positive")
    return r ** (-m / 2.0) / m


def pointwise_bound_check(ctx, f, z: complex, eps_num: float = 1e-10) -> dict:
    """Check |f(z)| <= ||f|| K_m(z, z)^{1/2} for a Taylor function f."""
    from .symbols import fock_norm_log, log_abs_eval

    lognorm, tail = fock_norm_log(f, ctx)
    if not np.isfinite(lognorm):
        raise ValueError("Fock norm of f diverges")
    log_lhs = float(log_abs_eval(f, z))
    log_rhs = lognorm + 0.5 * float(log_kernel_diag(_m_of(ctx), z))
    return {
        "lhs": math.exp(log_lhs) if log_lhs < 709 else math.inf,
        "rhs": math.exp(log_rhs) if log_rhs < 709 else math.inf,
        "log_lhs": log_lhs,
        "log_rhs": log_rhs,
        "pass": log_lhs <= log_rhs + math.log1p(eps_num),
    }
