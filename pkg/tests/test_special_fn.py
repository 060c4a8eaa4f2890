import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf, gammaln

from focklab.special_fn import (
    ASYMPTOTIC_PRINCIPAL,
    MittagLeflerParams,
    kernel,
    kernel_diag_asymptotic,
    log_gamma,
    log_kernel,
    log_kernel_diag,
    mittag_leffler,
    ml_log,
    pointwise_bound_check,
    theta0,
)
from focklab.symbols import FockContext, PolynomialSymbol, TaylorFunction, exp_taylor


def erf_closed_form(x):
    return x * math.exp(x * x) * (1 + erf(x)) + 1 / math.sqrt(math.pi)


# log-gamma

@pytest.mark.parametrize("x, expected", [
    (1.0, 0.0),
    (0.5, 0.5 * math.log(math.pi)),
    (2.5, math.log(1.3293403881791355)),
])
def test_log_gamma_values(x, expected):
    assert log_gamma(x) == pytest.approx(expected, abs=1e-14)


def test_log_gamma_against_scipy_on_range():
    xs = np.geomspace(0.1, 200, 4001)
    ours = log_gamma(xs)
    ref = gammaln(xs)
    rel = np.abs(ours - ref) / np.maximum(np.abs(ref), 1.0)
    assert rel.max() <= 1e-13


@given(st.floats(0.1, 199.0))
def test_log_gamma_recurrence(x):
    assert log_gamma(x + 1) - log_gamma(x) == pytest.approx(math.log(x), abs=1e-12 * max(1.0, abs(math.log(x))))


@pytest.mark.parametrize("x", [0.0, -1.0, -0.5])
def test_log_gamma_domain(x):
    with pytest.raises(ValueError):
        log_gamma(x)


# Mittag-Leffler

def test_ml_examples():
    assert mittag_leffler(MittagLeflerParams(1), 2).value.real == pytest.approx(math.exp(2), rel=1e-14)
    assert mittag_leffler(MittagLeflerParams(2), 0).value.real == pytest.approx(1 / math.sqrt(math.pi), rel=1e-15)
    assert mittag_leffler(MittagLeflerParams(2), 1).value.real == pytest.approx(erf_closed_form(1.0), rel=1e-12)


def test_ml_m1_is_exp_on_disc():
    rng = np.random.default_rng(0)
    z = 20 * np.sqrt(rng.uniform(0, 1, 4000)) * np.exp(2j * np.pi * rng.uniform(0, 1, 4000))
    la, ph, _, _ = ml_log(z, 1.0)
    val = np.exp(la + 1j * ph)
    assert np.max(np.abs(val - np.exp(z)) / np.exp(np.abs(z))) <= 1e-12


def test_ml_m2_erf_closed_form():
    xs = np.linspace(0, 3, 301)
    la, ph, _, _ = ml_log(xs.astype(complex), 2.0)
    ref = np.array([erf_closed_form(x) for x in xs])
    assert np.max(np.abs(np.exp(la) * np.cos(ph) - ref) / ref) <= 1e-10


def test_ml_params_invariants():
    with pytest.raises(ValueError):
        MittagLeflerParams(0.5)
    with pytest.raises(ValueError):
        MittagLeflerParams(2, series_tol=0)
    with pytest.raises(ValueError):
        MittagLeflerParams(2, switch_radius=-1)
    assert MittagLeflerParams(2).radius > 0


@given(st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.floats(0, 60), st.floats(-math.pi, math.pi))
def test_branch_rule(m, r, t):
    kv = mittag_leffler(MittagLeflerParams(m), r * complex(math.cos(t), math.sin(t)))
    assert kv.est_rel_err >= 0
    if kv.branch == ASYMPTOTIC_PRINCIPAL:
        assert abs(t) <= math.pi / (2 * m) + 1e-12


def test_ml_huge_argument_is_log_scaled():
    kv = mittag_leffler(MittagLeflerParams(1), 2000)
    assert kv.saturated and kv.log_abs == pytest.approx(2000, rel=1e-12)


# kernel

def test_kernel_examples():
    assert kernel(1, 1, 1).value.real == pytest.approx(math.e / math.pi, rel=1e-14)
    for m in (1, 1.5, 2, 3):
        assert kernel(m, 1 + 2j, 0).value.real == pytest.approx(m / math.pi / math.gamma(1 / m), rel=1e-14)
    a, b = kernel(2, 1 + 1j, 1 - 1j), kernel(2, 1 - 1j, 1 + 1j)
    assert a.value == pytest.approx(b.value.conjugate(), rel=1e-14)


@pytest.mark.parametrize("m", [1.0, 1.5, 2.0])
def test_kernel_hermitian_and_positive(m):
    rng = np.random.default_rng(1)
    z = rng.normal(size=1000) * 1.5 + 1j * rng.normal(size=1000) * 1.5
    w = rng.normal(size=1000) * 1.5 + 1j * rng.normal(size=1000) * 1.5
    l1, p1, _ = log_kernel(m, z, w)
    l2, p2, _ = log_kernel(m, w, z)
    assert np.max(np.abs(l1 - l2)) <= 1e-12
    assert np.max(np.abs(np.angle(np.exp(1j * (p1 + p2))))) <= 1e-9
    ld = log_kernel_diag(m, z)
    _, pd, _ = log_kernel(m, z, z)
    assert np.all(np.isfinite(ld)) and np.max(np.abs(pd)) <= 1e-12


def test_kernel_origin_exact():
    for m in (1.0, 1.5, 2.0):
        kv = kernel(m, 0, 0)
        assert kv.branch == "series" and kv.value.imag == 0
        assert kv.value.real == pytest.approx(m / math.pi / math.gamma(1 / m), rel=1e-15)


def test_diag_asymptotic_m1_exact():
    for x in (0.5, 2.0, 5.0):
        assert kernel_diag_asymptotic(1, x) == pytest.approx(kernel(1, x, x).value.real, rel=1e-13)


@pytest.mark.parametrize("m", [1.0, 1.5, 2.0])
def test_diag_asymptotic_within_2pct(m):
    x = 36 ** (1 / (2 * m))
    ratio = math.exp(float(log_kernel_diag(m, x)) - kernel_diag_asymptotic(m, x, log=True))
    assert abs(ratio - 1) <= 0.02


def test_diag_asymptotic_m2_x24():
    ratio = math.exp(float(log_kernel_diag(2, 2.4)) - kernel_diag_asymptotic(2, 2.4, log=True))
    assert abs(ratio - 1) <= 0.05


def test_diag_asymptotic_m15_monotone():
    xs = np.linspace(1, 2.5, 13)
    r = [math.exp(float(log_kernel_diag(1.5, x)) - kernel_diag_asymptotic(1.5, x, log=True)) for x in xs]
    dev = np.abs(np.array(r) - 1)
    assert np.all(np.diff(dev) <= 1e-12)
    assert dev[-1] < 1e-6


def test_diag_asymptotic_domain():
    with pytest.raises(ValueError):
        kernel_diag_asymptotic(1, 0.0)


def test_theta0():
    assert theta0(2, 4) == 0.125
    assert theta0(1, 1) == 1.0
    assert theta0(1, 100) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        theta0(1, 0)


def test_sector_decay_m2():
    th = np.linspace(math.pi / 4 + 0.05, math.pi, 40)
    la, _, _ = log_kernel(2, 3.0, 3.0 * np.exp(1j * th))
    scaled = np.exp(la) * 9
    assert np.all(np.isfinite(scaled)) and scaled.max() < 1.0


# pointwise bound

def test_pointwise_bound_equality_at_origin():
    rep = pointwise_bound_check(FockContext(1), TaylorFunction.constant(1.0), 0)
    assert rep["lhs"] == pytest.approx(1.0) and rep["rhs"] == pytest.approx(1.0) and rep["pass"]


def test_pointwise_bound_examples():
    f = TaylorFunction.polynomial([0, 1])
    assert pointwise_bound_check(FockContext(1), f, 2)["pass"]
    g = exp_taylor(PolynomialSymbol((0, 0, 1)), 60)
    assert pointwise_bound_check(FockContext(2), g, 1 + 1j)["pass"]
