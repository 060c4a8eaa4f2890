import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from focklab.operator import (
    CompressionMatrix,
    ConvergenceWarning,
    compression_matrix,
    lemma3_points,
    log_sarason_F,
    log_schur_integral,
    norm_growth_curve,
    operator_norm_lower,
    sarason_F,
    schur_H,
    schur_bound,
    weyl_norm_m1,
)
from focklab.symbols import FockContext, PolynomialSymbol, TaylorFunction, exp_taylor

coef = st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False)


def uv(g, N):
    return exp_taylor(g, max(N, g.degree)), exp_taylor(-g, max(N, g.degree))


# compression matrices

def test_identity_compression():
    one = TaylorFunction.constant(1.0)
    A = compression_matrix(one, one, FockContext(1.5), 4)
    np.testing.assert_allclose(A.entries, np.eye(4), atol=1e-15)


def test_weyl_compression_corner_and_norm():
    ctx = FockContext(1)
    u, v = uv(PolynomialSymbol((0, 1)), 64)
    A = compression_matrix(u, v, ctx, 64)
    assert A.entries[0, 0] == pytest.approx(1.0, abs=1e-15)
    sigma = operator_norm_lower(A)
    assert 0.98 * math.exp(0.5) <= sigma <= math.exp(0.5) * (1 + 1e-9)
    np.testing.assert_allclose(sigma, np.linalg.svd(A.entries, compute_uv=False)[0], rtol=1e-6)


def test_compression_matches_dense_product():
    # A = P_N M_u M_v^* P_N computed from bigger factor matrices
    ctx = FockContext(1.5)
    g = PolynomialSymbol((0.1, 0.4, 0.2j))
    u, v = uv(g, 30)
    N = 12
    h = ctx.h[:N]
    Mu = np.zeros((N, N), complex)
    Mv = np.zeros((N, N), complex)
    for j in range(N):
        for l in range(j + 1):
            Mu[j, l] = u.coeffs[j - l] * math.sqrt(h[j] / h[l])
            Mv[j, l] = v.coeffs[j - l] * math.sqrt(h[j] / h[l])
    A = compression_matrix(u, v, ctx, N)
    np.testing.assert_allclose(A.entries, Mu @ Mv.conj().T, rtol=1e-12, atol=1e-14)


def test_compression_rejects_bad_input():
    p = TaylorFunction.polynomial([1, 2])
    with pytest.raises(ValueError):
        compression_matrix(p, p, FockContext(1), 5)
    with pytest.raises(ValueError):
        compression_matrix(p, p, FockContext(1), 0)
    with pytest.raises(FloatingPointError):
        CompressionMatrix(1, np.array([[np.nan]]), FockContext(1))


@given(st.lists(coef, min_size=1, max_size=3))
@settings(max_examples=20, deadline=None)
def test_matrix_berezin_consistency(cs):
    g = PolynomialSymbol(tuple(cs))
    u, v = uv(g, 8)
    A = compression_matrix(u, v, FockContext(2), 8)
    assert A.entries[0, 0] == pytest.approx(u(0) * np.conj(v(0)), rel=1e-13, abs=1e-15)


# power iteration

def test_power_iteration_examples():
    assert operator_norm_lower(np.eye(5)) == pytest.approx(1.0, rel=1e-12)
    assert operator_norm_lower(np.diag([1.0, 2.0])) == pytest.approx(2.0, rel=1e-10)
    assert operator_norm_lower(np.zeros((3, 3))) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_power_iteration_random_vs_svd(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((20, 20)) + 1j * rng.standard_normal((20, 20))
    ref = np.linalg.svd(M, compute_uv=False)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        assert operator_norm_lower(M) == pytest.approx(ref, rel=1e-8)


def test_power_iteration_deterministic_and_warns():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((30, 30))
    assert operator_norm_lower(M, seed=3) == operator_norm_lower(M, seed=3)
    with pytest.warns(ConvergenceWarning):
        val = operator_norm_lower(M, max_iter=2)
    assert 0 < val <= np.linalg.svd(M, compute_uv=False)[0] * (1 + 1e-12)
    with pytest.raises(ValueError):
        operator_norm_lower(np.array([[np.inf]]))


# norm curves

@given(st.lists(coef, min_size=2, max_size=3))
@settings(max_examples=10, deadline=None)
def test_nested_monotonicity(cs):
    g = PolynomialSymbol(tuple(cs))
    u, v = uv(g, 40)
    ctx = FockContext(2)
    full = compression_matrix(u, v, ctx, 40).entries
    s = [np.linalg.svd(full[:n, :n], compute_uv=False)[0] for n in (5, 10, 20, 40)]
    assert np.all(np.diff(s) >= -1e-10 * max(s))


def test_norm_curve_zero_symbol():
    c = norm_growth_curve(PolynomialSymbol((0,)), FockContext(1.5), [8, 16, 32])
    np.testing.assert_allclose(c.sigmas, 1.0, rtol=1e-12)
    assert c.verdict == "bounded-consistent" and all(c.converged)
    d = json.loads(c.to_json())
    assert d["Ns"] == [8, 16, 32] and c.to_csv().splitlines()[0] == "N,sigma,err_bound"


def test_norm_curve_dichotomy_m2():
    ctx = FockContext(2)
    bounded = norm_growth_curve(PolynomialSymbol((0, 0, 1)), ctx, [16, 32, 64, 96])
    unbounded = norm_growth_curve(PolynomialSymbol((0, 0, 0, 1)), ctx, [16, 32, 64, 96])
    assert bounded.verdict == "bounded-consistent" and bounded.ratio < 1.05
    assert unbounded.verdict == "unbounded-consistent" and unbounded.ratio > 5
    for c in (bounded, unbounded):
        assert np.all(np.diff(c.sigmas) >= -1e-9 * max(c.sigmas))


# Schur test

def test_schur_kernel_values():
    assert schur_H(PolynomialSymbol((0,)), 1, 0, 0) == pytest.approx(1 / math.pi)
    g = PolynomialSymbol((0.2, 1 - 0.5j, 0.3))
    for z, w in ((0.5 + 1j, -1 + 0.2j), (2.0, 1j)):
        assert schur_H(-g, 1.5, z, w) == pytest.approx(schur_H(g, 1.5, w, z), rel=1e-12)


def test_schur_integral_gaussian_oracle():
    for x in (0.0, 1.3, 2.5):
        assert math.exp(log_schur_integral(PolynomialSymbol((0,)), 1, x)) == pytest.approx(2.0, rel=1e-10)


def test_schur_bound_zero_symbol():
    rep = schur_bound(PolynomialSymbol((0,)), 1, grid=[0.0, 1.0, 2.0], a_sweep=())
    assert rep.sup_value == pytest.approx(4.0, rel=1e-10)
    assert rep.sup_value == max(rep.H_values)
    assert rep.to_csv().splitlines()[0] == "x,H_value"


def test_schur_bound_linear_sweep_and_sandwich():
    rep = schur_bound(PolynomialSymbol((0, 0.5)), 1, grid=[0.0, 1.0, 2.0, 3.0])
    assert rep.fitted_C1 > 0 and 0 < rep.fitted_C2 <= 1.1
    sigma = norm_growth_curve(PolynomialSymbol((0, 0.5)), FockContext(1), [64]).sigmas[-1]
    assert sigma <= rep.norm_bound * (1 + 1e-6)
    assert rep.norm_bound <= rep.sup_value


# F(z, w) and test points

@given(st.lists(coef, min_size=1, max_size=4), coef, st.complex_numbers(max_magnitude=3, allow_nan=False,
                                                                           allow_infinity=False))
@settings(max_examples=40)
def test_F_on_diagonal(cs, c, z):
    if abs(c) < 1e-6:
        return
    g = PolynomialSymbol(tuple(cs))
    la, _ = log_sarason_F(g, c, 1.5, z, z)
    assert float(la) == pytest.approx(math.log(abs(c)), abs=1e-9)


def test_F_grows_along_test_points_for_unbounded():
    g = PolynomialSymbol((0, 0, 0, 1))
    lf = [float(log_sarason_F(g, 1.0, 2, *lemma3_points(g, 2, x))[0]) for x in (4.0, 6.0, 8.0)]
    assert lf[0] < lf[1] < lf[2]


def test_F_bounded_grid_for_bounded():
    g = PolynomialSymbol((0, 0, 1))
    t = np.linspace(-3, 3, 13)
    Z = (t[:, None] + 1j * t[None, :]).ravel()
    la, _ = log_sarason_F(g, 1.0, 2, Z[:, None], Z[None, :])
    assert np.max(la) < 1.0


def test_lemma3_points_geometry():
    g = PolynomialSymbol((0, 0, 0, 2j))
    z, w = lemma3_points(g, 2, 5.0)
    assert abs(z) == pytest.approx(5.0) and abs(w) == pytest.approx(5.0)
    lead = 2j * z ** 3
    assert lead.real == pytest.approx(0.0, abs=1e-9) and lead.imag < 0
    assert (g(z) - g(w)).real > 0
    with pytest.raises(ValueError):
        lemma3_points(PolynomialSymbol((1,)), 1, 1.0)


def test_sarason_F_value():
    F = sarason_F(PolynomialSymbol((0, 1)), 2.0, 1, 0.3, 0.3)
    assert abs(F) == pytest.approx(2.0)


def test_weyl_norm():
    assert weyl_norm_m1(0) == 1.0
    assert weyl_norm_m1(1) == pytest.approx(1.6487212707)
    assert weyl_norm_m1(2) == pytest.approx(math.exp(2))
    assert weyl_norm_m1(1j) == weyl_norm_m1(1)


def test_no_universal_constant():
    a = 2.2
    ratio = math.exp(2 * a * a) / weyl_norm_m1(a) ** 2
    assert ratio == pytest.approx(math.exp(a * a)) and ratio > 100
