"""Product quadrature over the plane against e^{-|z|^{2m}} dA(z).

Radial direction: composite Gauss-Legendre (16-point panels) in r.
Angular direction: trapezoid rule, spectrally accurate for periodic data.
The error estimate always comes from repeating the rule with doubled nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .special_fn import log_gamma

PANEL = 16
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts, radial cutoff and target tolerance.

    ``r_max=None`` lets the integrator choose the cutoff from ``tol`` and the
    caller's growth envelope.
    """

    n_radial: int = 64
    n_angular: int = 64
    r_max: float | None = None
    tol: float = 1e-12

    def __post_init__(self):
        if self.n_radial < 8:
            raise ValueError("n_radial must be >= 8")
        if self.n_angular < 8 or self.n_angular % 2:
            raise ValueError("n_angular must be even and >= 8")
        if self.r_max is not None and not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.n_radial, 2 * self.n_angular, self.r_max, self.tol)


@dataclass(frozen=True)
class PlanarIntegral:
    value: complex
    est_abs_err: float
    nodes_used: tuple


@dataclass(frozen=True)
class LogPlanarIntegral:
    """A positive integral carried as its logarithm."""

    log_value: float
    est_rel_err: float
    nodes_used: tuple


def default_r_max(m: float, tol: float, log_envelope: float | Callable = 0.0) -> float:
    """Smallest r with r^{2m} - log(envelope(r)) - log r >= log(1/tol) + 5."""
    target = math.log(1.0 / tol) + 5.0
    if not callable(log_envelope):
        return max(1.0, (target + max(float(log_envelope), 0.0)) ** (1.0 / (2 * m)))
    r = max(1.0, target ** (1.0 / (2 * m)))
    for _ in range(2000):
        if r ** (2 * m) - float(log_envelope(r)) - math.log(r) >= target:
            return r
        r *= 1.02
    raise ValueError("growth envelope is not dominated by the weight")


@lru_cache(maxsize=32)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def radial_nodes(a: float, b: float, n: int):
    """Composite Gauss-Legendre nodes and weights on [a, b] (n rounded up to panels)."""
    panels = max(1, -(-n // PANEL))
    x, w = _legendre(PANEL)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    r = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wr = (half[:, None] * w[None, :]).ravel()
    return r, wr


def angular_nodes(n: int, center: float = 0.0):
    th = center - math.pi + 2 * math.pi * (np.arange(n) + 0.5) / n
    return th, np.full(n, 2 * math.pi / n)


def _grid(m, spec: QuadratureSpec, r_max, r_min=0.0, center=0.0):
    r, wr = radial_nodes(r_min, r_max, spec.n_radial)
    th, wt = angular_nodes(spec.n_angular, center)
    z = r[:, None] * np.exp(1j * th)[None, :]
    logw = np.log(wr * r)[:, None] - (r ** (2 * m))[:, None] + np.log(wt)[None, :]
    return z, logw


def _check_finite(vals, z):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = np.unravel_index(np.argmax(bad), vals.shape)
        raise FloatingPointError(f"integrand not finite at node z = {complex(z[i])!r}")


def _plain(f, m, spec, r_max):
    z, logw = _grid(m, spec, r_max)
    vals = np.asarray(f(z), dtype=complex)
    vals = np.broadcast_to(vals, z.shape)
    _check_finite(vals, z)
    w = np.exp(logw)
    terms = vals * w
    return complex(terms.sum()), float(np.abs(terms).sum()), z.size


def integrate_plane(f: Callable, m: float, spec: QuadratureSpec,
                    log_envelope: float | Callable = 0.0) -> PlanarIntegral:
    """Integral of f(z) e^{-|z|^{2m}} dA(z) over the disc |z| <= r_max.

    ``f`` must accept an array of complex points.  ``log_envelope`` (a
    constant or a function of r) describes the growth of |f| and is only used
    when ``spec.r_max`` is None.
    """
    r_max = spec.r_max if spec.r_max is not None else default_r_max(m, spec.tol, log_envelope)
    coarse, _, n1 = _plain(f, m, spec, r_max)
    fine, abs_sum, n2 = _plain(f, m, spec.doubled(), r_max)
    floor = 64 * EPS * abs_sum
    return PlanarIntegral(fine, max(abs(fine - coarse), floor), (n1, n2))


def _arcs(mask: np.ndarray, th: np.ndarray, pad: int):
    """Contiguous angular arcs (start, end) covering the True cells of a
    periodic column mask, each widened by ``pad`` cells."""
    n = mask.size
    if mask.all():
        return None
    grown = mask.copy()
    for s in range(1, pad + 1):
        grown |= np.roll(mask, s) | np.roll(mask, -s)
    if grown.all():
        return None
    step = 2 * math.pi / n
    # rotate so index 0 is outside every arc
    start = int(np.argmin(grown))
    g = np.roll(grown, -start)
    arcs = []
    i = 0
    while i < n:
        if g[i]:
            j = i
            while j + 1 < n and g[j + 1]:
                j += 1
            lo = th[(i + start) % n] - 0.5 * step
            arcs.append((lo, lo + (j - i + 1) * step))
            i = j + 1
        else:
            i += 1
    return arcs


def _arc_nodes(arcs, n_per_arc: int):
    ths, wts = [], []
    for lo, hi in arcs:
        t, wt = radial_nodes(lo, hi, n_per_arc)
        ths.append(t)
        wts.append(wt)
    return np.concatenate(ths), np.concatenate(wts)


def integrate_plane_log(log_f: Callable, m: float, spec: QuadratureSpec,
                        log_envelope: float | Callable = 0.0, rtol: float = 1e-9,
                        support_drop: float = 45.0, max_level: int = 6) -> LogPlanarIntegral:
    """log of the integral of a positive integrand given through ``log_f``.

    A scan grid locates where the weighted log-integrand comes within
    ``support_drop`` of its maximum.  The radial interval and the angular
    arcs containing that support are then integrated with composite
    Gauss-Legendre rules (or the trapezoid rule when the support wraps the
    whole circle), doubling radial and angular nodes independently until
    successive results agree to ``rtol``.
    """
    r_max = spec.r_max if spec.r_max is not None else default_r_max(m, spec.tol, log_envelope)
    scan = QuadratureSpec(max(spec.n_radial, 128), max(spec.n_angular, 512), r_max, spec.tol)
    z, logw = _grid(m, scan, r_max)
    lv = _eval_log(log_f, z)
    prof = lv + logw
    peak = prof.max()
    if not np.isfinite(peak):
        return LogPlanarIntegral(-math.inf, 0.0, (z.size,))
    keep = prof >= peak - support_drop
    rows = np.nonzero(keep.any(axis=1))[0]
    r_all = np.abs(z[:, 0])
    pad_r = 2 * r_max / scan.n_radial
    r_lo = max(0.0, r_all[rows[0]] - pad_r)
    r_hi = r_max if rows[-1] == len(r_all) - 1 else min(r_max, r_all[rows[-1]] + pad_r)
    th_scan = -math.pi + 2 * math.pi * (np.arange(scan.n_angular) + 0.5) / scan.n_angular
    arcs = _arcs(keep.any(axis=0), th_scan, pad=3)

    def level(nr, na):
        r, wr = radial_nodes(r_lo, r_hi, nr)
        if arcs is None:
            th, wt = angular_nodes(na)
        else:
            th, wt = _arc_nodes(arcs, na)
        zz = r[:, None] * np.exp(1j * th)[None, :]
        with np.errstate(divide="ignore"):
            lw = np.log(wr * r)[:, None] - (r ** (2 * m))[:, None] + np.log(wt)[None, :]
        val = _eval_log(log_f, zz)
        return _log_sum(val, lw), zz.size

    nr = spec.n_radial
    na = spec.n_angular if arcs is None else max(PANEL, spec.n_angular // 2)
    used = [z.size]
    cur, n_used = level(nr, na)
    used.append(n_used)
    rel = math.inf
    for _ in range(max_level):
        r_next, n1 = level(2 * nr, na)
        a_next, n2 = level(nr, 2 * na)
        used += [n1, n2]
        dr = _rel(r_next, cur)
        da = _rel(a_next, cur)
        rel = max(dr, da)
        if rel <= rtol:
            break
        if dr > rtol:
            nr *= 2
        if da > rtol:
            na *= 2
        cur, n_used = level(nr, na)
        used.append(n_used)
    return LogPlanarIntegral(cur, max(rel, 64 * EPS * (1 + abs(cur))), tuple(used))


def _rel(a: float, b: float) -> float:
    if not (np.isfinite(a) and np.isfinite(b)):
        return 0.0 if a == b else math.inf
    return abs(math.expm1(a - b))


def _eval_log(log_f, z):
    val = np.asarray(log_f(z), dtype=float)
    val = np.broadcast_to(val, z.shape)
    if np.any(np.isnan(val)) or np.any(val == np.inf):
        _check_finite(np.where(np.isneginf(val), 0.0, val), z)
    return val


def _log_sum(logv, logw):
    return float(logsumexp(logv + logw))


def moment(m: float, k: int) -> float:
    """h_k = (pi/m) Gamma((k+1)/m), the integral of |z|^{2k} against the weight."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return math.exp(math.log(math.pi / m) + log_gamma((k + 1.0) / m))


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    max_offdiag: float
    max_diag_dev: float
    est_abs_err: float

    @property
    def deviation(self) -> float:
        return float(np.max(np.abs(self.entries - np.eye(self.entries.shape[0]))))


def gram_matrix(ctx, kmax: int, spec: QuadratureSpec) -> GramMatrix:
    """Quadrature Gram matrix of e_k(z) = z^k / sqrt(h_k), k = 0..kmax."""
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    m = float(getattr(ctx, "m", ctx))
    n = kmax + 1
    norms = np.array([math.sqrt(moment(m, k)) for k in range(n)])
    G = np.empty((n, n), dtype=complex)
    err = 0.0
    for j in range(n):
        for k in range(j, n):
            res = integrate_plane(lambda z, j=j, k=k: z ** j * np.conj(z) ** k / (norms[j] * norms[k]),
                                  m, spec, log_envelope=lambda r, p=j + k: p * math.log(r))
            G[j, k] = res.value
            G[k, j] = np.conj(res.value)
            err = max(err, res.est_abs_err)
    off = G - np.diag(np.diag(G))
    return GramMatrix(G, float(np.max(np.abs(off))), float(np.max(np.abs(np.diag(G) - 1))), err)


@dataclass(frozen=True)
class LogLineIntegral:
    """log of a positive 1-D integral with its support and node count."""

    log_value: float
    est_rel_err: float
    support: tuple
    nodes_used: int


def _eval_line(log_f, t):
    val = np.asarray(log_f(t), dtype=float)
    val = np.broadcast_to(val, np.shape(t))
    if np.any(np.isnan(val)) or np.any(val == np.inf):
        bad = np.nonzero(np.isnan(val) | (val == np.inf))[0][0]
        raise FloatingPointError(f"integrand not finite at t = {float(np.ravel(t)[bad])!r}")
    return val


def _upper_limit(f, lo: float, drop: float) -> float:
    b = max(2.0 * lo, lo + 1.0, 1.0)
    for _ in range(64):
        t = np.linspace(lo, b, 65)
        v = f(t)
        if v[-1] < v.max() - drop - 10 and v[-1] <= v[-2]:
            return b
        b *= 2.0
    raise ValueError("integrand does not decay")


def _edge(f, inside: float, outside: float, thr: float, tol: float) -> float:
    """Bisect for the crossing of log f = thr between an inside and an outside point."""
    for _ in range(60):
        mid = 0.5 * (inside + outside)
        if f(np.array([mid]))[0] >= thr:
            inside = mid
        else:
            outside = mid
        if abs(inside - outside) <= tol:
            break
    return outside


def integrate_line_log(log_f: Callable, lo: float, hi: float = math.inf, rtol: float = 1e-10,
                       drop: float = 45.0, n_scan: int = 512, max_level: int = 10) -> LogLineIntegral:
    """log of the integral of exp(log_f(t)) over [lo, hi].

    A scan followed by a bounded maximization locates the peak; the support is
    where log_f is within ``drop`` of it (e^{-45} ~ 3e-20 of the peak).  Both
    sides of the peak get composite Gauss-Legendre panels, doubled until two
    levels agree to ``rtol``.
    """
    from scipy.optimize import minimize_scalar

    def f(t):
        return _eval_line(log_f, t)

    if not math.isfinite(hi):
        hi = _upper_limit(f, lo, drop)
    if not hi > lo:
        raise ValueError("empty integration interval")
    t = np.linspace(lo, hi, n_scan)
    v = f(t)
    i = int(np.argmax(v))
    if not np.isfinite(v[i]):
        return LogLineIntegral(-math.inf, 0.0, (lo, hi), n_scan)
    res = minimize_scalar(lambda s: -f(np.array([s]))[0], bounds=(t[max(i - 1, 0)], t[min(i + 1, n_scan - 1)]),
                          method="bounded", options={"xatol": 1e-12 * max(1.0, abs(t[i]))})
    peak_t, peak = (float(res.x), -float(res.fun)) if -res.fun > v[i] else (float(t[i]), float(v[i]))
    thr = peak - drop
    above = np.nonzero(v >= thr)[0]
    left_in = min(float(t[above[0]]), peak_t) if above.size else peak_t
    right_in = max(float(t[above[-1]]), peak_t) if above.size else peak_t
    outs_l = t[(t < left_in) & (v < thr)]
    outs_r = t[(t > right_in) & (v < thr)]
    etol = 1e-3 * (hi - lo) / n_scan
    s_lo = _edge(f, left_in, float(outs_l[-1]), thr, etol) if outs_l.size else lo
    s_hi = _edge(f, right_in, float(outs_r[0]), thr, etol) if outs_r.size else hi

    def level(panels):
        nodes, weights = [], []
        for a, b in ((s_lo, peak_t), (peak_t, s_hi)):
            if b > a:
                r, w = radial_nodes(a, b, panels * PANEL)
                nodes.append(r)
                weights.append(w)
        r = np.concatenate(nodes)
        w = np.concatenate(weights)
        return float(logsumexp(f(r) + np.log(w))), r.size

    panels = 2
    cur, used = level(panels)
    total = n_scan + used
    rel = math.inf
    for _ in range(max_level):
        panels *= 2
        nxt, used = level(panels)
        total += used
        rel = _rel(nxt, cur)
        cur = nxt
        if rel <= rtol:
            break
    return LogLineIntegral(cur, max(rel, 64 * EPS * (1 + abs(cur))), (s_lo, s_hi), total)


def graded_nodes(a: float, b: float, width, panels: int = 12):
    """Gauss-Legendre nodes on [a, b] (or [b, a]) graded geometrically away from a.

    ``width`` may be an array (one grading per row); returns arrays of shape
    ``(len(width), panels * 16)``.
    """
    x, w = _legendre(PANEL)
    width = np.atleast_1d(np.asarray(width, dtype=float))
    span = abs(b - a)
    sgn = 1.0 if b >= a else -1.0
    first = np.clip(width, 1e-300, span / 2)
    q = (span / first) ** (1.0 / (panels - 1))
    j = np.arange(panels - 1)
    edges = np.concatenate([np.zeros((width.size, 1)), first[:, None] * q[:, None] ** j[None, :],
                            np.full((width.size, 1), span)], axis=1)
    edges = np.minimum(edges, span)
    lo_e, hi_e = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (hi_e - lo_e)
    mid = 0.5 * (hi_e + lo_e)
    t = (mid[:, :, None] + half[:, :, None] * x[None, None, :]).reshape(width.size, -1)
    wt = (half[:, :, None] * w[None, None, :]).reshape(width.size, -1)
    return a + sgn * t, wt
