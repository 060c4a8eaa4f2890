"""Polynomial symbols g, Taylor data of e^g and Fock-space norms."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .special_fn import log_gamma

# partial-norm ratio above which successive doublings count as divergence
DIVERGENCE_RATIO = 1.5
MEMBERSHIP_NS = (16, 32, 64, 128)
AUTO_REL = 1e-18
AUTO_MAX_N = 4096


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialSymbol:
    """g(z) = a_0 + a_1 z + ... + a_d z^d, lowest degree first.

    Trailing zero coefficients are stripped, so ``degree`` is the true
    degree (0 for constants, including g = 0).
    """

    coeffs: tuple

    def __post_init__(self):
        cs = [complex(c) for c in self.coeffs]
        if not all(np.isfinite(c.real) and np.isfinite(c.imag) for c in cs):
            raise ValueError("symbol coefficients must be finite")
        while len(cs) > 1 and cs[-1] == 0:
            cs.pop()
        if not cs:
            cs = [0j]
        object.__setattr__(self, "coeffs", tuple(cs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def leading_modulus(self) -> float:
        return abs(self.coeffs[-1])

    @property
    def leading_arg(self) -> float:
        return math.atan2(self.coeffs[-1].imag, self.coeffs[-1].real)

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for c in reversed(self.coeffs):
            out = out * z + c
        return complex(out) if out.ndim == 0 else out

    def __neg__(self) -> "PolynomialSymbol":
        return PolynomialSymbol(tuple(-c for c in self.coeffs))

    def scaled(self, s: complex) -> "PolynomialSymbol":
        return PolynomialSymbol(tuple(s * c for c in self.coeffs))

    def rotated(self, theta: float) -> "PolynomialSymbol":
        """g(e^{i theta} z)."""
        return PolynomialSymbol(tuple(c * complex(math.cos(j * theta), math.sin(j * theta))
                                      for j, c in enumerate(self.coeffs)))

    def monomials(self) -> list[tuple[int, complex]]:
        """Nonzero (j, a_j) pairs with j >= 1."""
        return [(j, c) for j, c in enumerate(self.coeffs) if j >= 1 and c != 0]

    def to_json(self) -> list[list[float]]:
        return [[c.real, c.imag] for c in self.coeffs]

    @classmethod
    def from_json(cls, data) -> "PolynomialSymbol":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(tuple(complex(re_, im) for re_, im in data))

    @classmethod
    def parse(cls, text: str) -> "PolynomialSymbol":
        """Parse a comma-separated coefficient flag such as ``"0,1+2i,-0.5"``."""
        return cls(tuple(parse_coefficient(tok) for tok in text.split(",")))


def _real(text: str, token: str) -> float:
    if text in ("", "+"):
        return 1.0
    if text == "-":
        return -1.0
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"bad coefficient token {token!r}") from None
    if not math.isfinite(v) or text.strip() != text or "_" in text:
        raise ValueError(f"bad coefficient token {token!r}")
    return v


def parse_coefficient(token: str) -> complex:
    """One token of the coefficient flag: ``re``, ``re+imi`` or ``imi``."""
    t = token.strip()
    if not t:
        raise ValueError(f"bad coefficient token {token!r}")
    if not t.endswith("i"):
        if t in ("+", "-"):
            raise ValueError(f"bad coefficient token {token!r}")
        return complex(_real(t, token), 0.0)
    body = t[:-1]
    # split at the last sign that is neither leading nor part of an exponent
    cut = max((k for k, ch in enumerate(body) if ch in "+-" and k > 0 and body[k - 1] not in "eE"), default=None)
    if cut is None:
        return complex(0.0, _real(body, token))
    if body[:cut] in ("", "+", "-"):
        raise ValueError(f"bad coefficient token {token!r}")
    return complex(_real(body[:cut], token), _real(body[cut:], token))


def format_coefficient(c: complex) -> str:
    c = complex(c)
    if c.imag == 0:
        return repr(c.real)
    return f"{c.real!r}{c.imag:+}i"


def hardy_norm(g: PolynomialSymbol) -> float:
    """H^2 norm of g on the unit disc, sqrt(sum |a_j|^2)."""
    return math.sqrt(math.fsum(abs(c) ** 2 for c in g.coeffs))


# ---------------------------------------------------------------------------
# Fock context
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _log_h(m: float, n: int) -> np.ndarray:
    arr = math.log(math.pi / m) + log_gamma((np.arange(n + 1) + 1.0) / m)
    arr.setflags(write=False)
    return arr


def log_h(m: float, n: int) -> np.ndarray:
    """log h_k for k = 0..n, h_k = (pi/m) Gamma((k+1)/m)."""
    return _log_h(float(m), int(n))


@dataclass(frozen=True)
class FockContext:
    """Weight exponent m of F^2_m plus a working truncation degree."""

    m: float
    trunc_N: int = 128
    _h: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.m >= 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.trunc_N < 1:
            raise ValueError("trunc_N must be >= 1")
        object.__setattr__(self, "m", float(self.m))
        with np.errstate(over="ignore"):
            h = np.exp(log_h(self.m, self.trunc_N))
        h.setflags(write=False)
        object.__setattr__(self, "_h", h)

    @property
    def h(self) -> np.ndarray:
        return self._h

    def log_h(self, n: int | None = None) -> np.ndarray:
        return log_h(self.m, self.trunc_N if n is None else n)


# ---------------------------------------------------------------------------
# Taylor functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaylorFunction:
    """Truncated Taylor data c_0..c_N of an entire function.

    ``declared_tail_bound`` bounds sum_{k>N} |c_k|^2 h_k (in the context
    the function was truncated for).  When ``generator`` is set the function
    is exactly ``scale * exp(generator)`` and point values use that formula.
    """

    coeffs: np.ndarray
    declared_tail_bound: float = 0.0
    generator: PolynomialSymbol | None = None
    scale: complex = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a nonempty 1-d array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if not self.declared_tail_bound >= 0:
            raise ValueError("declared_tail_bound must be >= 0")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.coeffs.size - 1

    @classmethod
    def polynomial(cls, coeffs) -> "TaylorFunction":
        return cls(np.atleast_1d(np.asarray(coeffs, dtype=complex)))

    @classmethod
    def constant(cls, c: complex = 1.0) -> "TaylorFunction":
        return cls(np.array([c], dtype=complex), generator=PolynomialSymbol((0,)), scale=complex(c))

    def log_abs_coeffs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.coeffs))

    def __call__(self, z):
        if self.generator is not None:
            return self.scale * np.exp(self.generator(z))
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for c in reversed(self.coeffs):
            out = out * z + c
        return complex(out) if out.ndim == 0 else out

    def truncated(self, n: int) -> "TaylorFunction":
        return TaylorFunction(self.coeffs[: n + 1])


def log_abs_eval(f: TaylorFunction, z):
    """log|f(z)| without overflow."""
    if f.generator is not None:
        with np.errstate(divide="ignore"):
            return math.log(abs(f.scale)) + np.real(f.generator(z)) if f.scale != 0 else -np.inf
    z = np.asarray(z, dtype=complex)
    lz = np.log(np.maximum(np.abs(z), 1e-300))
    lc = f.log_abs_coeffs()
    k = np.arange(f.coeffs.size)
    logt = lc[None, :] + k[None, :] * lz.reshape(-1, 1)
    logt[:, 0] = lc[0]
    shift = np.max(logt, axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    zz = z.reshape(-1, 1)
    # evaluate sum c_k z^k e^{-shift} with the phase of z^k kept exactly
    mag = np.exp(logt - shift[:, None])
    ph = np.angle(f.coeffs)[None, :] + k[None, :] * np.angle(zz)
    s = np.abs(np.sum(mag * np.exp(1j * ph), axis=1))
    with np.errstate(divide="ignore"):
        out = np.log(s) + shift
    return float(out[0]) if z.ndim == 0 else out.reshape(z.shape)


def exp_taylor(g: PolynomialSymbol, N: int | None = None, ctx: FockContext | None = None,
               c: complex = 1.0) -> TaylorFunction:
    """Taylor coefficients of c * e^{g} by the recurrence
    (n+1) c_{n+1} = sum_j j a_j c_{n+1-j}.

    With ``N=None`` the truncation is chosen automatically for ``ctx``:
    stop once |c_N|^2 h_N <= 1e-18 * (partial norm)^2 over a window of
    max(5, d+1) consecutive indices; the tail bound is 10x the last window.
    """
    d = g.degree
    a = g.coeffs
    c0 = complex(c) * np.exp(a[0])
    if N is not None:
        if N < d:
            raise ValueError("N must be >= deg g")
        return TaylorFunction(_recurrence(a, c0, N), 0.0, g, complex(c))
    if ctx is None:
        raise ValueError("automatic truncation needs a FockContext")
    window = max(5, d + 1)
    n_try = max(64, 4 * d)
    while True:
        coeffs = _recurrence(a, c0, n_try)
        lh = log_h(ctx.m, n_try)
        with np.errstate(divide="ignore"):
            lt = 2 * np.log(np.abs(coeffs)) + lh
        run_sum = np.logaddexp.accumulate(lt)
        small = lt <= math.log(AUTO_REL) + run_sum
        quiet = 0
        for k in range(d, n_try + 1):
            quiet = quiet + 1 if small[k] else 0
            if quiet >= window and k >= d + window:
                block = logsumexp(lt[k - window + 1: k + 1])
                tail = 10.0 * math.exp(block) if np.isfinite(block) else 0.0
                return TaylorFunction(coeffs[: k + 1], tail, g, complex(c))
        if n_try >= AUTO_MAX_N:
            return TaylorFunction(coeffs, math.inf, g, complex(c))
        n_try = min(2 * n_try, AUTO_MAX_N)


def _recurrence(a, c0: complex, N: int) -> np.ndarray:
    d = len(a) - 1
    out = np.zeros(N + 1, dtype=complex)
    out[0] = c0
    ja = np.array([j * a[j] for j in range(1, d + 1)], dtype=complex)
    for n in range(N):
        lo = max(0, n + 1 - d)
        # c_{n+1-j} for j = 1..min(d, n+1)
        jmax = n + 1 - lo
        out[n + 1] = np.dot(ja[:jmax], out[n::-1][:jmax]) / (n + 1)
    return out


def fock_norm_log(f: TaylorFunction, ctx: FockContext) -> tuple[float, float]:
    """(log ||f||, declared tail bound) from sum |c_k|^2 h_k."""
    lh = log_h(ctx.m, f.N)
    lt = 2 * f.log_abs_coeffs() + lh
    if np.all(np.isneginf(lt)):
        return -math.inf, f.declared_tail_bound
    return 0.5 * float(logsumexp(lt)), f.declared_tail_bound


def fock_norm(f: TaylorFunction, ctx: FockContext) -> float:
    ln, _ = fock_norm_log(f, ctx)
    return math.exp(ln) if ln < 709 else math.inf


def partial_norms_log(f: TaylorFunction, ctx: FockContext, Ns) -> np.ndarray:
    """log of the partial Fock norms sqrt(sum_{k<=N} |c_k|^2 h_k)."""
    lh = log_h(ctx.m, f.N)
    lt = 2 * f.log_abs_coeffs() + lh
    acc = np.logaddexp.accumulate(lt)
    return np.array([0.5 * acc[min(n, f.N)] for n in Ns])


@dataclass(frozen=True)
class MembershipVerdict:
    in_space: bool | None
    partial_norms: dict
    ratios: tuple
    reason: str


def membership_test(g: PolynomialSymbol, ctx: FockContext, Ns=MEMBERSHIP_NS,
                    threshold: float = DIVERGENCE_RATIO) -> MembershipVerdict:
    """Is e^g in F^2_m?  Orders above 2m are excluded outright; otherwise the
    partial-norm sequence decides (divergence when the last doubling still
    multiplies the norm by more than ``threshold``).  d = 2m gets no verdict.
    """
    d, m = g.degree, ctx.m
    if d > 2 * m:
        return MembershipVerdict(False, {}, (), f"order {d} exceeds 2m = {2 * m:g}")
    f = exp_taylor(g, max(Ns))
    logs = partial_norms_log(f, ctx, Ns)
    norms = {int(n): (math.exp(v) if v < 709 else math.inf) for n, v in zip(Ns, logs)}
    ratios = tuple(float(math.exp(min(b - a, 709.0))) for a, b in zip(logs[:-1], logs[1:]))
    if d == 2 * m:
        return MembershipVerdict(None, norms, ratios, "borderline d = 2m: no verdict")
    if ratios and ratios[-1] > threshold:
        return MembershipVerdict(False, norms, ratios, "partial norms diverge")
    return MembershipVerdict(True, norms, ratios, "partial norms converge")
