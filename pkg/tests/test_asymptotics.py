import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.special import ndtr

from focklab import asymptotics as asy
from focklab.asymptotics import (
    LEMMA_IDS,
    LaplaceError,
    LaplaceProblem,
    default_grid,
    direct_log_integral,
    envelope_verify,
    hx_analyze,
    hx_problem,
    integral_I,
    kernel_sector_verify,
    laplace_estimate,
    log_integral_I,
    rate_verify,
    refine_grid,
    safeguarded_newton,
)


# Laplace engine

@given(st.floats(1.0, 20.0), st.floats(0.2, 50.0))
def test_laplace_exact_on_gaussians(mu, c):
    # S = 1, h = c (r - mu)^2 / 2 on a domain wide enough that the tails vanish
    w = 40 / math.sqrt(c)
    p = LaplaceProblem(h=lambda r: 0.5 * c * (r - mu) ** 2, dh=lambda r: c * (r - mu), d2h=lambda r: c,
                       domain=(mu - w, mu + w), S=lambda r: np.ones_like(np.asarray(r, float)))
    est = laplace_estimate(p)
    assert est.r_x == pytest.approx(mu, abs=1e-12 * mu)
    assert est.log_value == pytest.approx(0.5 * math.log(2 * math.pi / c), abs=1e-12)


def test_laplace_examples():
    p = LaplaceProblem(h=lambda r: (r - 5) ** 2, dh=lambda r: 2 * (r - 5), d2h=lambda r: 2.0,
                       domain=(0.0, 10.0), S=lambda r: np.ones_like(np.asarray(r, float)))
    est = laplace_estimate(p)
    assert (est.r_x, est.c_x) == (pytest.approx(5.0), pytest.approx(2.0))
    assert est.value == pytest.approx(math.sqrt(math.pi), rel=1e-14)
    q = LaplaceProblem(h=lambda r: 2 * (r - 3) ** 2, dh=lambda r: 4 * (r - 3), d2h=lambda r: 4.0,
                       domain=(0.0, 10.0), S=lambda r: np.asarray(r, float) ** 2)
    assert laplace_estimate(q).value == pytest.approx(math.sqrt(2 * math.pi) / 2 * 9, rel=1e-14)


def test_laplace_hx_vs_direct_quadrature():
    p = hx_problem(1, 2, 0.3, 0.0, 8.0)
    ratio = math.exp(laplace_estimate(p).log_value - direct_log_integral(p))
    assert abs(ratio - 1) <= 0.05


def test_laplace_errors():
    flat = LaplaceProblem(h=lambda r: r, dh=lambda r: 1.0, d2h=lambda r: 0.0, domain=(0.0, 1.0),
                          S=lambda r: np.ones_like(np.asarray(r, float)))
    with pytest.raises(LaplaceError):
        laplace_estimate(flat)
    quartic = LaplaceProblem(h=lambda r: r ** 4, dh=lambda r: 4 * r ** 3, d2h=lambda r: 12 * r ** 2,
                             domain=(-1.0, 1.0), S=lambda r: np.ones_like(np.asarray(r, float)))
    with pytest.raises(LaplaceError):
        laplace_estimate(quartic)
    with pytest.raises(ValueError):
        LaplaceProblem(h=abs, dh=abs, d2h=abs, domain=(1.0, 0.0), S=abs)
    with pytest.raises(ValueError):
        LaplaceProblem(h=abs, dh=abs, d2h=abs, domain=(0.0, 1.0))


def test_safeguarded_newton():
    r = safeguarded_newton(lambda t: t ** 3 - 2, lambda t: 3 * t * t, 0.0, 3.0)
    assert r == pytest.approx(2 ** (1 / 3), rel=1e-14)
    with pytest.raises(LaplaceError):
        safeguarded_newton(lambda t: t + 5, lambda t: 1.0, 0.0, 1.0)


# h_x analysis

def test_hx_examples():
    small = hx_analyze(1.5, 2, 1e-12, 0.0, 5.0)
    assert small.r_x == pytest.approx(5.0, rel=1e-9) and abs(small.h_min) < 1e-9
    res = hx_analyze(1, 2, 1.0, 0.0, 10.0)
    assert 0.98 <= res.r_x / (3 ** -1 * 10.0) <= 1.02
    res = hx_analyze(1, 1, 1.0, 0.0, 10.0)
    assert 0.9 <= res.rho_x * 10 / -1.0 <= 1.1


@given(st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.floats(0.0, 1.0), st.floats(0.01, 3.0),
       st.floats(0.0, 2.0), st.floats(2.0, 12.0))
@settings(max_examples=150, deadline=None)
def test_hx_stationary_and_convex(m, t, a, C, x):
    d = 1 + t * (2 * m - 1)
    # keep the predicted minimizer well inside (0, inf); near r = 0 there may be none
    assume((a + C) * d / (m * m) * x ** (d - 2 * m) < 0.2)
    res = hx_analyze(m, d, a, C, x)
    _, dh, _ = asy._hx_funcs(m, d, a, C, x)
    scale = 2 * m * x ** (2 * m - 1) + 2 * a * d * x ** (d - 1) + C * d * x ** max(d - 2, 0)
    assert abs(dh(res.r_x / x - 1)) <= 1e-10 * scale
    assert res.c_x > 0


def test_hx_domain():
    for args in ((1, 3, 1.0, 0.0, 2.0), (1, 1, -1.0, 0.0, 2.0), (1, 1, 1.0, 0.0, 0.0)):
        with pytest.raises(ValueError):
            hx_analyze(*args)


@pytest.mark.parametrize("m, d, a, xs", [
    (1, 2, 0.5, np.geomspace(2, 20, 8)),
    (2, 3, 1.0, np.geomspace(2, 8, 8)),
    (1, 1, 1.0, np.geomspace(2, 20, 8)),
    (1.5, 2, 0.7, np.geomspace(2, 20, 8)),
    (2, 4, 0.3, np.geomspace(1, 5, 8)),
])
def test_rate_verify(m, d, a, xs):
    rep = rate_verify(m, d, a, xs)
    assert rep.pass_ and rep.monotone
    assert rep.to_csv().splitlines()[0] == "x,h_ratio,c_ratio,r_ratio"


def test_rate_verify_d2m_exact_at_all_x():
    # for C = 0 and d = 2m the leading rate is exact
    rep = rate_verify(1, 2, 0.5, [1.0, 5.0, 20.0])
    np.testing.assert_allclose(rep.h_ratios, 1.0, rtol=1e-12)


def test_small_a_gives_vanishing_minimum():
    vals = [-hx_analyze(1, 2, a, 0.0, 4.0).h_min for a in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2] >= 0 and vals[2] < 1e-8


def test_rate_verify_rejects():
    with pytest.raises(ValueError):
        rate_verify(1, 2, 0.5, [3.0, 2.0])
    with pytest.raises(OverflowError):
        rate_verify(1, 2, 0.5, [10.0, 1e140])


# integral I(a)

def test_integral_I_examples():
    assert integral_I(1, 0, 1, 0.0) == pytest.approx(1.0, rel=1e-12)
    # e^{2 r - r^2/2} over (0, inf) = e^2 sqrt(2 pi) Phi(2)
    assert integral_I(1, 1, 0, 2.0) == pytest.approx(math.exp(2) * math.sqrt(2 * math.pi) * ndtr(2), rel=1e-10)
    with pytest.raises(ValueError):
        integral_I(1, 1, -1, 1.0)


@given(st.sampled_from([1.0, 1.5, 2.0]), st.floats(0.0, 1.0), st.floats(0.0, 6.0), st.floats(0.01, 2.0),
       st.integers(0, 4))
@settings(max_examples=40, deadline=None)
def test_integral_I_monotone(m, t, a, da, N):
    d = t * m
    assume(d > 0)
    assert log_integral_I(m, d, N, a + da) > log_integral_I(m, d, N, a)


def test_integral_I_increasing_in_N_for_large_a():
    vals = [log_integral_I(1, 1, N, 4.0) for N in range(5)]
    assert np.all(np.diff(vals) > 0)


# envelope reports

def test_default_grids_cover_all_lemmas():
    for lid in LEMMA_IDS[:-1]:
        g = default_grid(lid, 2)
        assert all(len(v) >= 1 for v in g.values())
    with pytest.raises(ValueError):
        default_grid("Lemma9", 1)


def test_refine_grid_inserts_midpoints():
    g = refine_grid({"a": [0.0, 1.0, 2.0], "d": [1.0, 2.0], "N": [1.0]})
    assert g["a"] == [0.0, 0.5, 1.0, 1.5, 2.0] and g["d"] == [1.0, 2.0] and g["N"] == [1.0]


def test_envelope_eq8_m1():
    rep = envelope_verify("Eq8", 1)
    assert rep.pass_ and rep.stable and np.isfinite(rep.fitted_constant)
    assert 0.45 <= rep.extra["log_I_over_a2"] <= 0.55
    d = json.loads(rep.to_json())
    assert d["lemma_id"] == "Eq8" and len(d["ratios"]) == len(d["grid"])
    assert rep.to_csv().splitlines()[0] == "point,ratio"


def test_envelope_lemma4_flagged_reconstructed():
    grid = {"a": [0.0, 1.0, 2.0], "d": [1.0], "x": [0.5, 1.5, 3.0], "N": [1.0]}
    rep = envelope_verify("Lemma4a", 1, grid, refine=False)
    assert "reconstructed" in rep.flags and rep.pass_


def test_envelope_lemma5_small_grids():
    for lid, grid in (("Lemma5I", {"a": [0.0, 1.0], "d": [1.0, 2.0], "x": [2.0, 4.0], "r": [2.5, 5.0]}),
                      ("Lemma5J", {"x": [2.0, 4.0], "r": [2.5, 5.0]})):
        rep = envelope_verify(lid, 2, grid, refine=True)
        assert rep.pass_ and rep.fitted_constant > 0 and rep.drift is not None


def test_envelope_lemma5I_m2_window():
    grid = {"a": [0.0], "d": [1.0], "x": [2.0, 4.0], "r": [5.0, 10.0]}
    rep = envelope_verify("Lemma5I", 2, grid, refine=False)
    xr = [p["x"] * p["r"] for p in rep.grid]
    assert min(xr) >= 10 and max(xr) <= 40 and rep.pass_


def test_envelope_rejects_bad_grids():
    with pytest.raises(ValueError):
        envelope_verify("Eq8", 1, {"a": [1.0], "d": [2.0], "N": [1.0]}, refine=False)
    with pytest.raises(ValueError):
        envelope_verify("Lemma5J", 1, {"x": [0.5], "r": [1.0]}, refine=False)
    with pytest.raises(ValueError):
        envelope_verify("Eq8", 1, {"a": [1.0]}, refine=False)
    with pytest.raises(ValueError):
        envelope_verify("nope", 1)


def test_envelope_caps_huge_exponents():
    rep = envelope_verify("Eq8", 1, {"a": [1.0, 40.0], "d": [1.0], "N": [1.0]}, refine=False)
    assert "capped" in rep.flags and len(rep.grid) == 1


def test_threads_env(monkeypatch):
    monkeypatch.setenv("FOCKLAB_THREADS", "1")
    assert asy._workers() == 1
    assert asy._pmap(lambda v: v * v, [1, 2, 3]) == [1, 4, 9]


# kernel sectors

def test_kernel_sector_m1_exact():
    rep = kernel_sector_verify(1, {"x": [1.0, 2.0], "r": [1.5, 3.0], "theta": [0.0]})
    assert rep.extra["principal_constant"] == pytest.approx(1 / math.pi, rel=1e-12)
    assert math.pi * max(rep.ratios) == pytest.approx(1.0, rel=1e-12)


def test_kernel_sector_m2_examples():
    rep = kernel_sector_verify(2, {"x": [2.5], "r": [2.5], "theta": [0.01]})
    assert rep.extra["window_c"] >= 0.5 and rep.extra["lower_constant"] > 0
    rep = kernel_sector_verify(2, {"x": [3.0], "r": [3.0], "theta": [2.0]})
    assert rep.extra["outer_constant"] < 1.0 and rep.pass_


def test_kernel_sector_default_grid():
    rep = envelope_verify("Lemma1", 2)
    assert rep.pass_ and rep.lemma_id == "Lemma1"
    assert set(rep.extra["kinds"]) == {"principal", "outer"}
