import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from focklab.berezin import (
    RaySweep,
    berezin_product,
    berezin_sq,
    closed_form_B_m1_quadratic,
    closed_form_berezin_m1,
    curly_B,
    log_curly_B,
    log_curly_B_window,
    product_sweep,
    rate_check,
    rate_target,
    ray_sweep,
    worst_ray,
)
from focklab.quadrature import QuadratureSpec, integrate_plane
from focklab.special_fn import log_kernel, log_kernel_diag
from focklab.symbols import PolynomialSymbol, TaylorFunction, exp_taylor

ONE = TaylorFunction.constant(1.0)


def test_examples():
    f = exp_taylor(PolynomialSymbol((0, 1)), 20)
    assert berezin_sq(f, 1, 0).value == pytest.approx(math.e, rel=1e-12)
    assert berezin_product(f, exp_taylor(PolynomialSymbol((0, -1)), 20), 1, 0.7 - 0.4j) == \
        pytest.approx(math.exp(2), rel=1e-12)
    assert berezin_product(ONE, ONE, 2, 1 + 1j) == pytest.approx(1.0, abs=1e-12)
    assert curly_B(PolynomialSymbol((0,)), 1.5, 2.0) == pytest.approx(1.0, rel=1e-9)
    assert curly_B(PolynomialSymbol((0, 1)), 1, 0) == pytest.approx(math.e, rel=1e-12)


@pytest.mark.parametrize("m", [1.0, 1.5, 2.0])
def test_normalization(m):
    for z in (0, 0.5 + 1j, -2.0, 2.5j):
        assert berezin_sq(ONE, m, z).value == pytest.approx(1.0, abs=1e-8)


def test_m1_closed_form_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        z = 2 * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        f = exp_taylor(PolynomialSymbol((0, np.conj(a))), 20)
        assert berezin_sq(f, 1, z).value == pytest.approx(closed_form_berezin_m1(a, 1, z), rel=1e-6)


def test_closed_form_examples():
    assert closed_form_berezin_m1(1, 1, 0) == pytest.approx(math.e)
    assert closed_form_berezin_m1(0, 1, 3 + 4j) == 1.0
    assert closed_form_berezin_m1(1, 1, 1) == pytest.approx(math.exp(3))


@given(st.complex_numbers(max_magnitude=2.5, allow_nan=False, allow_infinity=False))
@settings(max_examples=15, deadline=None)
def test_cauchy_schwarz(z):
    f = exp_taylor(PolynomialSymbol((0, 0.5, 0.3j)), 20)
    s = berezin_sq(f, 1.5, z)
    assert s.value >= 0
    assert s.value + s.est_abs_err >= abs(f(z)) ** 2 * (1 - 1e-12)


def test_cauchy_schwarz_m2_example():
    f = exp_taylor(PolynomialSymbol((0, 0, 1)), 60)
    assert berezin_sq(f, 2, 1).value >= abs(f(1)) ** 2


def test_polynomial_berezin_fixed_point():
    # ~u = u for polynomials of degree <= 4 (harmonic symbols)
    spec = QuadratureSpec(64, 64, tol=1e-14)
    u = TaylorFunction.polynomial([0.5, -1, 0.25j, 0, 0.1])
    for m in (1.0, 2.0):
        for z in (0.3 + 0.2j, -1.0 + 0.5j):
            lkzz = float(log_kernel_diag(m, z))

            def f(w, z=z):
                lk, _, _ = log_kernel(m, w, z)
                return u(w) * np.exp(2 * lk - lkzz)

            env = lambda r, z=z: 4 * math.log(max(r, 1e-300)) + 2 * (r * abs(z)) ** m + 1
            val = integrate_plane(f, m, spec, log_envelope=env).value
            assert val == pytest.approx(u(z), abs=1e-8)


def test_product_growth_m2_cubic():
    g = PolynomialSymbol((0, 0, 0, 1))
    u, v = exp_taylor(g, 3), exp_taylor(-g, 3)
    lv = [berezin_product(u, v, 2, x * np.exp(1j * worst_ray(g)), log=True) for x in (2.0, 3.0)]
    assert lv[1] > lv[0]


def test_worst_ray():
    assert worst_ray(PolynomialSymbol((0, 0, 0, 1))) == 0.0
    assert worst_ray(PolynomialSymbol((0, 0, -1))) == pytest.approx(math.pi / 2)
    assert worst_ray(PolynomialSymbol((0, 0, 0, 1j))) == pytest.approx(-math.pi / 6)
    with pytest.raises(ValueError):
        worst_ray(PolynomialSymbol((3,)))


@given(st.integers(1, 5), st.floats(-math.pi, math.pi))
def test_worst_ray_aligns_leading_term(d, alpha):
    g = PolynomialSymbol(tuple([0] * d + [complex(math.cos(alpha), math.sin(alpha))]))
    phi = worst_ray(g)
    assert abs(phi) <= math.pi / d + 1e-12
    assert np.exp(1j * (alpha + d * phi)) == pytest.approx(1.0, abs=1e-9)


def test_quadratic_closed_form_m1():
    a = 0.3
    g = PolynomialSymbol((0, 0, a))
    for x in (0.5, 2.0, 4.0):
        assert math.exp(log_curly_B(g, 1, x)) == pytest.approx(closed_form_B_m1_quadratic(a, x), rel=1e-9)


def test_window_is_a_lower_bound():
    g = PolynomialSymbol((0, 0, 0.3))
    for x in (2.0, 4.0):
        assert log_curly_B_window(g, 1, x) <= log_curly_B(g, 1, x) + 1e-9


def test_v_not_in_space_is_an_error():
    with pytest.raises(ValueError):
        log_curly_B(PolynomialSymbol((0, 0, 0.6)), 1, 1.0)
    with pytest.raises(ValueError):
        log_curly_B(PolynomialSymbol((0, 0, 0, 1)), 1, 1.0)


def test_rate_target():
    assert rate_target(1, 2, 0.5) == (2, 0.5)
    assert rate_target(1, 2, 0.3) == pytest.approx((2, 0.225))
    assert rate_target(2, 3, 1.0) == pytest.approx((2, 2.25))


def test_rate_check_m1_quadratic():
    rep = rate_check(PolynomialSymbol((0, 0, 0.3)), 1)
    assert rep.pass_ and rep.fitted_rate == pytest.approx(0.225, rel=1e-6)


def test_rate_check_m2_cubic_exponent():
    rep = rate_check(PolynomialSymbol((0, 0, 0, 1)), 2, n=6)
    assert rep.pass_ and 0.8 <= rep.fitted_exponent / 2 <= 1.25


def test_rate_check_bounded_linear():
    rep = rate_check(PolynomialSymbol((0, 1)), 1, xs=np.linspace(0, 6, 7))
    assert rep.bounded and rep.pass_ and rep.fitted_rate <= 1 + 1e-3


def test_rate_check_domain():
    with pytest.raises(ValueError):
        rate_check(PolynomialSymbol((0, 0, 0, 1)), 1)


def test_sweeps():
    g = PolynomialSymbol((0, 0.5))
    s = ray_sweep(g, 1, [0.5, 1.0, 2.0])
    np.testing.assert_allclose(s.log_values, 0.25, atol=1e-10)
    assert s.to_csv().splitlines()[0] == "x,log_value,est_err"
    p = product_sweep(g, 1, [0.5, 1.0, 2.0])
    np.testing.assert_allclose(p.log_values, 0.5, atol=1e-10)
    with pytest.raises(ValueError):
        RaySweep(0.0, [1.0, 1.0], [0.0, 0.0])
