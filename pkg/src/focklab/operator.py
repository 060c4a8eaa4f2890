"""Finite sections of T_u T_v*, norm estimates, the Schur test and the
function F(z, w) whose boundedness the Toeplitz product forces.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .quadrature import QuadratureSpec, integrate_plane_log
from .special_fn import log_kernel, log_kernel_diag
from .symbols import FockContext, PolynomialSymbol, TaylorFunction, exp_taylor, log_h

EPS = np.finfo(float).eps
# per-entry cancellation bound above which an entry is recomputed in mpmath
MP_ENTRY_TOL = 1e-13


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class CompressionMatrix:
    """Matrix of P_N T_u T_v* P_N in the orthonormal monomial basis.

    ``err_bound`` bounds the rounding error relative to the largest singular
    value; ``mp_entries`` counts entries recomputed in extended precision.
    """

    n: int
    entries: np.ndarray
    ctx: FockContext
    err_bound: float = 0.0
    mp_entries: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.entries)):
            raise FloatingPointError("compression matrix has non-finite entries")


def _factor_matrix(f: TaylorFunction, lh: np.ndarray, N: int):
    """(M_f)_{jl} = f_{j-l} sqrt(h_j / h_l) for l <= j < N, built in log space."""
    c = np.zeros(N, dtype=complex)
    k = min(N, f.coeffs.size)
    c[:k] = f.coeffs[:k]
    with np.errstate(divide="ignore"):
        lc = np.log(np.abs(c))
    ph = np.angle(c)
    j = np.arange(N)[:, None]
    l = np.arange(N)[None, :]
    diff = j - l
    low = diff >= 0
    dd = np.where(low, diff, 0)
    logmag = np.where(low, lc[dd] + 0.5 * (lh[j] - lh[l]), -np.inf)
    return np.exp(logmag) * np.exp(1j * np.where(low, ph[dd], 0.0))


def _mp_coeffs(f: TaylorFunction, N: int, dps: int):
    """Taylor coefficients in mpmath, from the generator when available."""
    with mpmath.workdps(dps):
        if f.generator is None:
            return [mpmath.mpc(complex(x)) for x in f.coeffs[:N]] + [mpmath.mpc(0)] * max(0, N - f.coeffs.size)
        a = [mpmath.mpc(complex(x)) for x in f.generator.coeffs]
        d = len(a) - 1
        out = [mpmath.mpc(complex(f.scale)) * mpmath.exp(a[0])]
        for n in range(N - 1):
            s = mpmath.mpc(0)
            for jj in range(1, min(d, n + 1) + 1):
                s += jj * a[jj] * out[n + 1 - jj]
            out.append(s / (n + 1))
        return out


def compression_matrix(u: TaylorFunction, v: TaylorFunction, ctx: FockContext, N: int) -> CompressionMatrix:
    """A_{jk} = sum_{l <= min(j,k)} u_{j-l} conj(v_{k-l}) sqrt(h_j h_k) / h_l, 0 <= j, k < N.

    The sum is A = M_u M_v^H.  Entries whose cancellation bound
    eps * sum|terms| exceeds ``MP_ENTRY_TOL`` times a trusted lower bound on
    the largest singular value are recomputed with mpmath.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if u.generator is None and N > u.coeffs.size or v.generator is None and N > v.coeffs.size:
        raise ValueError("N exceeds the truncation of u or v")
    m = ctx.m
    lh = log_h(m, N - 1)
    Mu = _factor_matrix(u, lh, N)
    Mv = _factor_matrix(v, lh, N)
    A = Mu @ Mv.conj().T
    S = np.abs(Mu) @ np.abs(Mv).T
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(S)):
        raise FloatingPointError("overflow while assembling the compression matrix")
    absA = np.abs(A)
    trusted = absA >= 1e3 * EPS * S
    sigma_lo = float(absA[trusted].max()) if np.any(trusted) else float(absA.max())
    if sigma_lo == 0:
        return CompressionMatrix(N, A, ctx, 0.0, 0)
    bound = EPS * S / sigma_lo
    redo = np.argwhere(bound > MP_ENTRY_TOL)
    if redo.size:
        worst = float(bound.max())
        dps = 20 + int(math.ceil(math.log10(max(worst / MP_ENTRY_TOL, 1.0))))
        A = A.copy()
        _mp_fill(A, redo, u, v, m, N, dps)
        bound = np.where(bound > MP_ENTRY_TOL, bound / EPS * 10.0 ** (-dps), bound)
    return CompressionMatrix(N, A, ctx, float(bound.max()) * N, int(len(redo)))


def _mp_fill(A, idx, u, v, m, N, dps):
    with mpmath.workdps(dps):
        mm = mpmath.mpf(m)
        h = [mpmath.pi / mm * mpmath.gamma((k + 1) / mm) for k in range(N)]
        sq = [mpmath.sqrt(x) for x in h]
        ih = [1 / x for x in h]
        uc = _mp_coeffs(u, N, dps)
        vc = [mpmath.conj(x) for x in _mp_coeffs(v, N, dps)]
        real = all(x.imag == 0 for x in uc) and all(x.imag == 0 for x in vc)
        if real:
            uc = [x.real for x in uc]
            vc = [x.real for x in vc]
        nzu = [x != 0 for x in uc]
        nzv = [x != 0 for x in vc]
        for j, k in idx:
            ls = [l for l in range(min(j, k) + 1) if nzu[j - l] and nzv[k - l]]
            if not ls:
                A[j, k] = 0.0
                continue
            s = mpmath.fdot([uc[j - l] * vc[k - l] for l in ls], [ih[l] for l in ls])
            A[j, k] = complex(s * sq[j] * sq[k])


def operator_norm_lower(A, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 42) -> float:
    """Largest singular value by power iteration on A A^*.

    Start: normalized all-ones vector plus a seeded perturbation.  Stops when
    the Rayleigh quotient changes by less than ``tol`` (relative); otherwise
    warns and returns the best value found.
    """
    M = A.entries if isinstance(A, CompressionMatrix) else np.asarray(A)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    n = M.shape[0]
    rng = np.random.default_rng(seed)
    x = np.ones(n, dtype=complex) / math.sqrt(n) + 1e-3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    x /= np.linalg.norm(x)
    MH = M.conj().T
    lam_old = 0.0
    best = 0.0
    for _ in range(max_iter):
        y = MH @ x
        lam = float(np.vdot(y, y).real)
        best = max(best, lam)
        xn = M @ y
        nrm = np.linalg.norm(xn)
        if nrm == 0:
            return 0.0
        x = xn / nrm
        if lam > 0 and abs(lam - lam_old) <= tol * lam:
            return math.sqrt(lam)
        lam_old = lam
    warnings.warn("power iteration did not converge", ConvergenceWarning, stacklevel=2)
    return math.sqrt(best)


@dataclass
class NormCurve:
    Ns: list
    sigmas: list
    err_bounds: list = field(default_factory=list)
    ratio: float = math.nan
    verdict: str = "inconclusive"
    converged: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"Ns": list(map(int, self.Ns)), "sigmas": list(map(float, self.sigmas)),
                "err_bounds": list(map(float, self.err_bounds)), "ratio": float(self.ratio),
                "verdict": self.verdict, "converged": list(map(bool, self.converged))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "sigma", "err_bound"])
        for n, s, e in zip(self.Ns, self.sigmas, self.err_bounds):
            w.writerow([int(n), repr(float(s)), repr(float(e))])
        return buf.getvalue()


def norm_growth_curve(g: PolynomialSymbol, ctx: FockContext, Ns, plateau: float = 1.05,
                      blowup: float = 5.0, seed: int = 42) -> NormCurve:
    """sigma(N) of the compressions of T_u T_v* for u = e^g, v = e^{-g}.

    The verdict compares sigma(N_max) with sigma(N_max / 4): below ``plateau``
    is bounded-consistent, above ``blowup`` unbounded-consistent.
    """
    Ns = sorted({int(n) for n in Ns})
    n_max = Ns[-1]
    quarter = max(1, n_max // 4)
    all_N = sorted(set(Ns) | {quarter})
    u = exp_taylor(g, max(n_max, g.degree))
    v = exp_taylor(-g, max(n_max, g.degree))
    sig, errs, conv = {}, {}, {}
    for n in all_N:
        A = compression_matrix(u, v, ctx, n)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            sig[n] = operator_norm_lower(A, seed=seed)
        conv[n] = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
        errs[n] = A.err_bound
    ratio = sig[n_max] / sig[quarter] if sig[quarter] > 0 else math.inf
    if ratio < plateau:
        verdict = "bounded-consistent"
    elif ratio > blowup:
        verdict = "unbounded-consistent"
    else:
        verdict = "inconclusive"
    return NormCurve(Ns, [sig[n] for n in Ns], [errs[n] for n in Ns], float(ratio), verdict,
                     [conv[n] for n in Ns])


# ---------------------------------------------------------------------------
# Schur test
# ---------------------------------------------------------------------------

def log_schur_H(g: PolynomialSymbol, ctx, z, w):
    """log H_g(z, w) = log|K(z,w)| - (|z|^{2m} + |w|^{2m})/2 + Re(g(z) - g(w))."""
    m = float(getattr(ctx, "m", ctx))
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    lk, _, _ = log_kernel(m, z, w)
    return lk - 0.5 * (np.abs(z) ** (2 * m) + np.abs(w) ** (2 * m)) + np.real(g(z) - g(w))


def schur_H(g: PolynomialSymbol, ctx, z: complex, w: complex) -> float:
    return float(np.exp(log_schur_H(g, ctx, z, w)))


def log_schur_integral(g: PolynomialSymbol, ctx, z: complex,
                       spec: QuadratureSpec = QuadratureSpec(64, 64, tol=1e-14)) -> float:
    """log of H_g(z) = integral of H_g(z, w) dA(w)."""
    m = float(getattr(ctx, "m", ctx))
    z = complex(z)
    az = abs(z)
    gz = complex(g(z)).real
    mods = [abs(c) for c in g.coeffs]

    def log_f(w):
        # integrate_plane_log supplies e^{-|w|^{2m}}; H carries only half of it
        lk, _, _ = log_kernel(m, z, w)
        return lk - 0.5 * az ** (2 * m) + 0.5 * np.abs(w) ** (2 * m) + gz - np.real(g(w))

    def env(r):
        return 0.5 * r ** (2 * m) + (r * az) ** m + sum(a * r ** j for j, a in enumerate(mods))

    # the weight must still dominate: r^{2m}/2 beats everything when deg g < 2m
    return integrate_plane_log(log_f, m, spec, log_envelope=env).log_value


@dataclass
class SchurReport:
    grid: list
    H_values: list
    sup_value: float
    fitted_C1: float
    fitted_C2: float
    norm_bound: float = math.nan
    assembled_bound: float = math.nan
    a_sweep: list = field(default_factory=list)
    sweep_sups: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (list(map(float, v)) if isinstance(v, list) else float(v)) for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "H_value"])
        for x, h in zip(self.grid, self.H_values):
            w.writerow([repr(float(x)), repr(float(h))])
        return buf.getvalue()


def _sup_pair(g, ctx, grid, n_psi, spec):
    """Per-radius max over angles of H_g(z) + H_{-g}(z), and the separate sups."""
    d = max(g.degree, 1)
    psis = np.arange(n_psi) * (2 * math.pi / d) / n_psi
    per_x = []
    sup_p = sup_m = 0.0
    for x in grid:
        best = 0.0
        for psi in psis:
            z = x * complex(math.cos(psi), math.sin(psi))
            hp = math.exp(log_schur_integral(g, ctx, z, spec))
            hm = math.exp(log_schur_integral(-g, ctx, z, spec))
            best = max(best, hp + hm)
            sup_p = max(sup_p, hp)
            sup_m = max(sup_m, hm)
            if x == 0:
                break
        per_x.append(best)
    return per_x, sup_p, sup_m


def schur_bound(g: PolynomialSymbol, ctx, grid=None, spec: QuadratureSpec = QuadratureSpec(64, 64, tol=1e-14),
                a_sweep=(0.25, 0.5, 1.0), n_psi: int = 4) -> SchurReport:
    """Schur-test bound sup_z (H_g(z) + H_{-g}(z)) over a radius grid.

    ``norm_bound`` = sqrt(sup H_g * sup H_{-g}) bounds ||T_u T_v*||.  For
    several monomials the bound is also assembled from monomial bounds via
    Hoelder: H_{sum g_j} <= prod_j H_{n g_j}^{1/n}.  C1, C2 are fitted to
    log sup = log C1 + C2 a^2 over the leading-modulus sweep ``a_sweep``.
    """
    m = float(getattr(ctx, "m", ctx))
    if grid is None:
        grid = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0]
    grid = [float(x) for x in grid]
    per_x, sup_p, sup_m = _sup_pair(g, m, grid, n_psi, spec)
    sup_value = max(per_x)
    norm_bound = math.sqrt(sup_p * sup_m)

    monos = g.monomials()
    assembled = norm_bound
    if len(monos) > 1:
        n = len(monos)
        logs_p = logs_m = 0.0
        for j, c in monos:
            mono = PolynomialSymbol(tuple([0] * j + [n * c]))
            _, sp, sm = _sup_pair(mono, m, grid, n_psi, spec)
            logs_p += math.log(sp) / n
            logs_m += math.log(sm) / n
        assembled = math.exp(0.5 * (logs_p + logs_m))

    sweep_sups = []
    C1 = C2 = math.nan
    if g.degree >= 1 and a_sweep:
        base = g.scaled(1.0 / g.leading_modulus) if g.leading_modulus > 0 else g
        for a in a_sweep:
            if abs(a - g.leading_modulus) < 1e-12:
                sweep_sups.append(sup_value)
                continue
            pe, _, _ = _sup_pair(base.scaled(a), m, grid, n_psi, spec)
            sweep_sups.append(max(pe))
        if len(a_sweep) >= 2:
            aa = np.asarray(a_sweep, dtype=float) ** 2
            C2, logC1 = np.polyfit(aa, np.log(sweep_sups), 1)
            C1 = math.exp(logC1)
    elif g.degree == 0:
        C1, C2 = sup_value, 0.0
    return SchurReport(grid, per_x, sup_value, float(C1), float(C2), norm_bound, assembled,
                       list(a_sweep) if g.degree >= 1 else [], sweep_sups)


# ---------------------------------------------------------------------------
# F(z, w) and the Weyl norm
# ---------------------------------------------------------------------------

def log_sarason_F(g: PolynomialSymbol, c: complex, ctx, z, w):
    """(log|F|, arg F) for F = conj(c) e^{g(z) - conj(g(w))} K(z,w) / sqrt(K(z,z) K(w,w))."""
    m = float(getattr(ctx, "m", ctx))
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    lk, ph, _ = log_kernel(m, z, w)
    gz = g(z)
    gw = g(w)
    la = (math.log(abs(c)) + np.real(gz) - np.real(gw) + lk
          - 0.5 * (log_kernel_diag(m, z) + log_kernel_diag(m, w)))
    phase = -np.angle(c) + np.imag(gz) + np.imag(gw) + ph
    return la, phase


def sarason_F(g: PolynomialSymbol, c: complex, ctx, z: complex, w: complex) -> complex:
    la, ph = log_sarason_F(g, c, ctx, z, w)
    la, ph = float(la), float(ph)
    if la > 709:
        return complex(math.inf, 0.0)
    return complex(math.exp(la) * math.cos(ph), math.exp(la) * math.sin(ph))


def lemma3_points(g: PolynomialSymbol, m: float, x: float, c: float = 1.0) -> tuple[complex, complex]:
    """Test points z(x), w(x) along which |F| must stay bounded when T is bounded.

    Both lie on |z| = x with a_d z^d on the negative imaginary axis, so that
    Re(g(z) - g(w)) ~ |a_d| x^d sin(c / (2 m x^m)) > 0.
    """
    d = g.degree
    if d < 1:
        raise ValueError("need deg g >= 1")
    al = g.leading_arg
    z = x * complex(math.cos(-math.pi / (2 * d) - al / d), math.sin(-math.pi / (2 * d) - al / d))
    t = -math.pi / (2 * d) - (al + c / (2 * m * x ** m)) / d
    w = x * complex(math.cos(t), math.sin(t))
    return z, w


def weyl_norm_m1(a: complex) -> float:
    """||T_u T_v*|| = e^{|a|^2/2} for u = e^{conj(a) z}, v = e^{-conj(a) z} at m = 1."""
    return math.exp(abs(complex(a)) ** 2 / 2)
