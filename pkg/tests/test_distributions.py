from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from aqsgd.distributions import (
    DegenerateDistributionError,
    FoldedMeasure,
    MixtureModel,
    NormalParams,
    TruncatedNormal,
    fit_truncated_normal,
    normal_cdf,
    normal_inv_cdf,
    partial_expectation,
)

STD = NormalParams(0.0, 1.0)


def erf_series(x, terms=80):
    # Maclaurin series of erf, independent of scipy
    s = 0.0
    for n in range(terms):
        s += (-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * s


def phi_oracle(x):
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


def tn(mu, sigma, lo=0.0, hi=1.0):
    return TruncatedNormal(NormalParams(mu, sigma), lo, hi)


def test_normal_cdf_values():
    assert normal_cdf(0.0, STD) == pytest.approx(0.5, abs=1e-15)
    assert normal_cdf(1.0, STD) == pytest.approx(phi_oracle(1.0), abs=1e-12)
    assert normal_cdf(1.0, STD) == pytest.approx(0.8413447, abs=1e-7)
    for mu, sigma in [(0.0, 1.0), (3.0, 2.0), (-1.5, 0.01)]:
        assert normal_cdf(mu + 3 * sigma, NormalParams(mu, sigma)) == pytest.approx(phi_oracle(3.0), abs=1e-9)
    assert normal_cdf(phi_oracle(3.0), STD) > 0  # smoke
    assert normal_cdf(1e6, STD) == 1.0 and normal_cdf(-1e6, STD) == 0.0


def test_normal_inv_cdf():
    assert normal_inv_cdf(0.5, STD) == pytest.approx(0.0, abs=1e-15)
    assert normal_inv_cdf(0.8413447, STD) == pytest.approx(1.0, abs=1e-5)
    assert normal_inv_cdf(0.5, NormalParams(3.0, 2.0)) == pytest.approx(3.0)
    for bad in (0.0, 1.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            normal_inv_cdf(bad, STD)


@given(st.floats(1e-9, 1 - 1e-9))
def test_normal_inverse_consistency(y):
    assert normal_cdf(normal_inv_cdf(y, STD), STD) == pytest.approx(y, abs=1e-9)


def test_trunc_endpoints_and_symmetry():
    t = tn(0.0, 1.0, -1.0, 1.0)
    assert t.cdf(-1.0) == 0.0 and t.cdf(1.0) == 1.0
    assert t.cdf(0.0) == pytest.approx(0.5, abs=1e-15)


def test_trunc_cdf_matches_quadrature():
    t = tn(0.3, 0.2)
    val, _ = integrate.quad(t.pdf, 0.0, 0.3, epsabs=1e-13, epsrel=1e-13)
    assert t.cdf(0.3) == pytest.approx(val, abs=1e-8)
    total, _ = integrate.quad(t.pdf, 0.0, 1.0, epsabs=1e-13)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_far_tail_is_accurate():
    # interval 10-20 sigma to the right of the mean
    t = tn(-1.0, 0.1, 0.0, 1.0)
    xs = np.linspace(0, 1, 11)
    c = t.cdf(xs)
    assert np.all(np.diff(c) >= 0)
    assert c[0] == 0.0 and c[-1] == pytest.approx(1.0)
    # mass concentrates near the lower end: exponential tail with rate ~ 100
    assert t.cdf(0.05) > 0.99
    # Mills-ratio expansion of the mean excess: sigma/z * (1 - 2/z^2 + 10/z^4)
    z = 10.0
    assert t.mean() == pytest.approx(0.1 / z * (1 - 2 / z**2 + 10 / z**4), rel=1e-3)


def test_degenerate_mass():
    with pytest.raises(DegenerateDistributionError):
        tn(-100.0, 1e-3)


@given(st.floats(-0.5, 1.5), st.floats(0.05, 3), st.floats(1e-6, 1 - 1e-6))
def test_trunc_inverse(mu, sigma, y):
    t = tn(mu, sigma)
    assert t.cdf(t.inv_cdf(y)) == pytest.approx(y, abs=1e-8)


@given(st.floats(-0.5, 1.5), st.floats(0.05, 3), st.floats(0, 1), st.floats(0, 1))
def test_cdf_monotone(mu, sigma, x1, x2):
    t = tn(mu, sigma)
    lo, hi = min(x1, x2), max(x1, x2)
    assert t.cdf(lo) <= t.cdf(hi)


def test_moments_against_quadrature(rng):
    for _ in range(20):
        mu, sigma = rng.uniform(-0.5, 1.5), rng.uniform(0.02, 1.0)
        t = tn(mu, sigma)
        a, b = np.sort(rng.uniform(0, 1, 2))
        shift = rng.uniform(-1, 1)
        m = t.moments(a, b, shift)
        for k in range(3):
            val, _ = integrate.quad(lambda r: (r - shift) ** k * t.pdf(r), a, b, epsabs=1e-14, epsrel=1e-12)
            assert float(m[k]) == pytest.approx(val, abs=1e-10)


def test_mixture_single_and_duplicate():
    t = tn(0.3, 0.2)
    xs = np.linspace(0, 1, 9)
    np.testing.assert_allclose(MixtureModel.single(t).cdf(xs), t.cdf(xs), atol=1e-15)
    m = MixtureModel([t, t], [0.5, 0.5])
    np.testing.assert_allclose(m.cdf(xs), t.cdf(xs), atol=1e-15)
    with pytest.raises(ValueError):
        MixtureModel([])


def test_mixture_is_weighted_sum(rng):
    comps = [tn(rng.uniform(0, 1), rng.uniform(0.05, 0.5)) for _ in range(4)]
    w = rng.uniform(0.1, 1, 4)
    m = MixtureModel(comps, w)
    xs = rng.uniform(0, 1, 30)
    expect = sum(wi / w.sum() * c.cdf(xs) for wi, c in zip(w, comps))
    np.testing.assert_allclose(m.cdf(xs), expect, atol=1e-14)


def test_partial_expectation_near_uniform():
    m = MixtureModel.single(tn(0.5, 10.0))
    assert partial_expectation(0.0, 1.0, m) == pytest.approx(0.5, abs=1e-3)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_partial_expectation_additive(x, y, z):
    a, c, e = sorted((x, y, z))
    m = MixtureModel.from_params([0.2, 0.7], [0.1, 0.3], 0.0, 1.0, [1.0, 2.0])
    total = m.partial_expectation(a, c) + m.partial_expectation(c, e)
    assert float(total) == pytest.approx(float(m.partial_expectation(a, e)), abs=1e-10)


def test_folded_measure(rng):
    m = MixtureModel.from_params([0.1, -0.3], [0.2, 0.1], -1.0, 1.0, [1.0, 1.0])
    g = FoldedMeasure(m)
    x = 0.37
    assert g.cdf(x) == pytest.approx(m.cdf(x) - m.cdf(-x), abs=1e-15)
    val, _ = integrate.quad(lambda r: r * r * g.pdf(r), 0.1, 0.6, epsabs=1e-14)
    assert float(g.moments(0.1, 0.6)[2]) == pytest.approx(val, abs=1e-12)
    with pytest.raises(ValueError):
        FoldedMeasure(MixtureModel.single(tn(0.5, 0.1)))


def test_fit_truncated_normal(rng):
    t = fit_truncated_normal([0.5, 0.5, 0.5], 0, 1)
    assert t.mu == 0.5 and t.sigma == 1e-8
    t = fit_truncated_normal([0.2, 0.4], 0, 1)
    assert t.mu == pytest.approx(0.3) and t.sigma == pytest.approx(0.1 * math.sqrt(2))
    x = np.clip(rng.normal(0.3, 0.1, 100_000), 0, 1)
    t = fit_truncated_normal(x, 0, 1)
    assert t.mu == pytest.approx(0.3, rel=0.02) and t.sigma == pytest.approx(0.1, rel=0.02)
    with pytest.raises(ValueError):
        fit_truncated_normal([0.5], 0, 1)
    with pytest.raises(ValueError):
        fit_truncated_normal([0.5, 1.5], 0, 1)
