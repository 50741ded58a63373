"""Kernel-level checks: theta series, margins, W_{-1}, Borel/Laplace."""

import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qblab.errors import AccuracyError, DomainError, RangeError
from qblab.qkernel import (
    QCalcParams,
    TruncatedSeries,
    formal_q_borel,
    fourier_convolve,
    inverse_fourier,
    lambert_w_minus1,
    pi_q_k,
    q_laplace_ray,
    theta_admissibility,
    theta_lower_bound_margin,
    theta_q,
    theta_q_log,
)

P21 = QCalcParams(q=2.0, k=Fraction(1))


# ---------------------------------------------------------------- theta

def test_theta_frozen_value():
    # frozen from the 40-digit bilateral-sum oracle
    assert theta_q(P21, 1.0) == pytest.approx(3.2832651213103077, rel=1e-13)


def test_theta_complex_frozen_value():
    p = QCalcParams(q=1.5, k=Fraction(2))
    want = 6.0539064787504459233 - 1.0493314513425085608j
    got = theta_q(p, 0.7 + 0.1j)
    assert abs(got - want) / abs(want) < 1e-12


@pytest.mark.parametrize("q", [1.5, 2.0])
@pytest.mark.parametrize("k", [Fraction(1), Fraction(2)])
def test_theta_dilation_law(q, k):
    # Theta(q^{m/k} x) = q^{m(m+1)/(2k)} x^m Theta(x).  Relative accuracy
    # degrades with the condition number near zeros, so gate samples on the
    # separation margin the package itself exposes.
    p = QCalcParams(q=q, k=k)
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 30:
        r = 10.0 ** rng.uniform(-1, 1)
        phi = rng.uniform(0, 2 * math.pi)
        x = r * cmath.exp(1j * phi)
        if theta_admissibility(p, x, 0.2) < 0.2:
            continue
        base = theta_q(p, x)
        for m in range(-3, 4):
            shift = p.q_pow(Fraction(m, 1) / k)
            xs = shift * x
            lhs = theta_q(p, xs)
            rhs = p.q_pow(Fraction(m * (m + 1)) / (2 * k)) * x**m * base
            # forward error floor is eps * series mass, which the Gaussian
            # envelope of the terms measures; the value itself can sit far
            # below it when q^{1/k} is close to 1
            env = math.exp(p.kf * math.log(abs(xs)) ** 2 / (2 * p.logq))
            assert abs(lhs - rhs) <= 1e-10 * abs(rhs) + 1e-11 * env
        checked += 1


def test_theta_log_matches_plain():
    p = QCalcParams(q=2.0, k=Fraction(1, 2))
    x = np.array([0.3 + 0.4j, -2.0 + 0.1j, 5.0j])
    mag, ph = theta_q_log(p, x)
    direct = np.array([theta_q(p, xx) for xx in x])
    assert np.allclose(np.exp(mag) * np.exp(1j * ph), direct, rtol=1e-12)


def test_theta_log_extreme_scale():
    # far outside float range for the plain value; log path must not blow up
    mag, _ = theta_q_log(P21, 1e16)
    expect = P21.kf * math.log(1e16) ** 2 / (2 * P21.logq)
    assert mag == pytest.approx(expect, rel=0.05)
    with pytest.raises(RangeError):
        theta_q(P21, 1e16)


def test_theta_zero_rejected():
    with pytest.raises(DomainError):
        theta_q(P21, 0.0)


def test_theta_zero_set():
    # zeros sit at x = -q^{-m/k}; margin detects them, bound raises
    x = -0.5 + 0.0j  # = -q^{-1}
    assert theta_admissibility(P21, x, 0.2) < 1e-12
    assert abs(theta_q(P21, x)) < 1e-10
    with pytest.raises(DomainError):
        theta_lower_bound_margin(P21, x, 0.2)


def test_theta_margin_positive_on_ray():
    rng = np.random.default_rng(3)
    r = 10.0 ** rng.uniform(-1, 1, size=1000)
    x = r * cmath.exp(1j * 0.7)
    ratios = theta_lower_bound_margin(P21, x, 0.4)
    assert np.all(ratios > 0)
    # infimum stable under doubling the sampling density
    r2 = 10.0 ** np.linspace(-1, 1, 2000)
    x2 = r2 * cmath.exp(1j * 0.7)
    inf2 = np.min(theta_lower_bound_margin(P21, x2, 0.4))
    r4 = 10.0 ** np.linspace(-1, 1, 4000)
    inf4 = np.min(theta_lower_bound_margin(P21, r4 * cmath.exp(1j * 0.7), 0.4))
    assert abs(inf4 - inf2) <= 0.01 * inf2


@given(st.floats(min_value=-0.99, max_value=0.99), st.integers(-2, 2))
@settings(max_examples=60, deadline=None)
def test_theta_dilation_property(logr, m):
    x = cmath.exp(logr + 0.3j)
    lhs = theta_q(P21, P21.q_pow(m) * x)
    rhs = P21.q_pow(Fraction(m * (m + 1), 2)) * x**m * theta_q(P21, x)
    assert cmath.isclose(lhs, rhs, rel_tol=1e-10)


# ---------------------------------------------------------------- pi constant

def test_pi_q_k_frozen():
    assert pi_q_k(P21) == pytest.approx(2.4001930562687592, rel=1e-12)


def test_pi_q_k_against_mpmath():
    mp = pytest.importorskip("mpmath")
    p = QCalcParams(q=1.7, k=Fraction(3, 2))
    prod = mp.mpf(1)
    for n in range(400):
        prod *= 1 - mp.mpf(1.7) ** (-mp.mpf(n + 1) / mp.mpf(1.5))
    want = mp.log(mp.mpf(1.7)) / mp.mpf(1.5) / prod
    assert pi_q_k(p) == pytest.approx(float(want), rel=1e-12)


# ---------------------------------------------------------------- Lambert W

def test_lambert_frozen_values():
    assert lambert_w_minus1(-0.1) == pytest.approx(-3.5771520639572972, rel=1e-12)
    assert lambert_w_minus1(-1.0 / math.e) == -1.0


def test_lambert_residual_and_bracket():
    us = np.linspace(1e-3, 50.0, 1000)
    for u in us:
        y = -math.exp(-u - 1.0)
        w = lambert_w_minus1(y)
        # defining equation w e^w = y, in stable log form
        res = abs(w + math.log(-w) - math.log(-y))
        assert res < 1e-12 * max(1.0, abs(w))
        lo = -1 - math.sqrt(2 * u) - u
        hi = -1 - math.sqrt(2 * u) - 2 * u / 3
        assert lo < w < hi


def test_lambert_against_scipy():
    sp = pytest.importorskip("scipy.special")
    ys = -np.exp(np.linspace(math.log(1e-8), math.log(0.36), 50))
    ours = np.array([lambert_w_minus1(float(y)) for y in ys])
    ref = sp.lambertw(ys, k=-1).real
    assert np.allclose(ours, ref, rtol=1e-12)


def test_lambert_domain():
    for bad in (0.0, 0.5, -1.0, -0.5):
        with pytest.raises(DomainError):
            lambert_w_minus1(bad)


# ---------------------------------------------------------------- q-Borel

def test_borel_monomial_definition():
    # on a_n T^n the transform divides by q^{n(n-1)/(2k)}
    p = QCalcParams(q=4.0, k=Fraction(1))
    s = TruncatedSeries(np.array([1.0, 2.0, 3.0, 4.0], complex))
    b = formal_q_borel(s, p)
    for n, a in enumerate([1.0, 2.0, 3.0, 4.0]):
        assert b.coeff[n] == a * 4.0 ** (-n * (n - 1) / 2)


@pytest.mark.parametrize("q,k", [(2.0, Fraction(1)), (4.0, Fraction(2))])
@pytest.mark.parametrize("m,j", [(1, 0), (2, 1), (3, -1), (0, 2)])
def test_borel_commutation_exact(q, k, m, j):
    # Borel(T^m sigma^j f) = tau^m q^{-m(m-1)/(2k)} sigma^{j - m/k} Borel(f)
    p = QCalcParams(q=q, k=k)
    rng = np.random.default_rng(11)
    f = TruncatedSeries(rng.normal(size=6) + 1j * rng.normal(size=6))
    route_a = formal_q_borel(f.dilate(p, j).mul_pow(m), p)
    route_b = (
        formal_q_borel(f, p)
        .dilate(p, Fraction(j) - Fraction(m, 1) / k)
        .mul_pow(m)
        .scale(p.q_pow(Fraction(-m * (m - 1)) / (2 * k)))
    )
    # identical exponent lattice -> identical floats
    assert np.array_equal(route_a.coeff, route_b.coeff)


# ---------------------------------------------------------------- q-Laplace

def gaussian(u):
    return np.exp(-(u**2))


def test_laplace_gamma_independence():
    res0 = q_laplace_ray(gaussian, 0.12, 0.25 + 0.05j, P21, alpha=0.0,
                         r_lo=1e-8, r_hi=40.0, nodes_per_decade=90)
    res1 = q_laplace_ray(gaussian, -0.12, 0.25 + 0.05j, P21, alpha=0.0,
                         r_lo=1e-8, r_hi=40.0, nodes_per_decade=90)
    assert abs(res0.value - res1.value) < 1e-8 * max(1.0, abs(res0.value))
    assert res0.err_estimate < 1e-9


def test_laplace_dilation_commutation():
    # T sigma_q(L f)(T) = L(u sigma_q^{1 - 1/k} f)(T), order k = 1
    T = 0.2 + 0.03j
    lhs = P21.q_pow(0) * T * q_laplace_ray(
        gaussian, 0.1, P21.q * T, P21, alpha=0.0, r_lo=1e-8, r_hi=40.0,
        nodes_per_decade=90,
    ).value
    rhs = q_laplace_ray(
        lambda u: u * gaussian(u * P21.q_pow(Fraction(1) - Fraction(1) / P21.k)),
        0.1, T, P21, alpha=0.0, r_lo=1e-8, r_hi=40.0, nodes_per_decade=90,
    ).value
    assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


def test_laplace_radius_guard():
    with pytest.raises(DomainError):
        q_laplace_ray(gaussian, 0.0, 5.0 + 0j, P21, alpha=0.0)


def test_laplace_direction_guard():
    # T on the ray's antipode puts nodes on the kernel zero set
    with pytest.raises(DomainError):
        q_laplace_ray(gaussian, 0.0, -0.3 + 0j, P21, alpha=0.0,
                      r_lo=1e-6, r_hi=10.0)


def test_laplace_tail_guard():
    with pytest.raises(AccuracyError):
        q_laplace_ray(lambda u: np.ones_like(u) / (1 + np.abs(u)), 0.0,
                      0.2 + 0.1j, P21, alpha=0.0, r_lo=1e-2, r_hi=10.0)


# ---------------------------------------------------------------- Fourier ops

def _mgrid(M=16.0, h=0.125):
    n = int(round(2 * M / h)) + 1
    return np.linspace(-M, M, n)


def test_inverse_fourier_gaussian():
    # e^{-m^2/2} maps to e^{-z^2/2} under this normalization
    m = _mgrid()
    f = np.exp(-(m**2) / 2)
    for z in (0.0, 0.7, -1.3 + 0.2j):
        got = inverse_fourier(f, m, z, beta=1.0, beta_prime=0.5)
        assert abs(got - cmath.exp(-(complex(z) ** 2) / 2)) < 1e-12


def test_inverse_fourier_derivative_rule():
    m = _mgrid()
    f = np.exp(-(m**2) / 2) / (1 + m**2)
    z, hstep = 0.4, 1e-5
    left = (
        inverse_fourier(f, m, z + hstep, beta=1.0, beta_prime=0.5)
        - inverse_fourier(f, m, z - hstep, beta=1.0, beta_prime=0.5)
    ) / (2 * hstep)
    right = inverse_fourier(1j * m * f, m, z, beta=1.0, beta_prime=0.5)
    assert abs(left - right) < 1e-8


def test_inverse_fourier_strip_guard():
    m = _mgrid()
    f = np.exp(-np.abs(m))
    with pytest.raises(DomainError):
        inverse_fourier(f, m, 0.9j, beta=1.0, beta_prime=0.5)


def test_convolution_gaussian_closed_form():
    m = _mgrid(M=20.0, h=0.05)
    f = np.exp(-(m**2))
    conv = fourier_convolve(f, f, 0.05)
    want = math.sqrt(math.pi / 2) / math.sqrt(2 * math.pi) * np.exp(-(m**2) / 2)
    assert np.max(np.abs(conv - want)) < 1e-12
    # frozen point value at m = 0.7
    j = int(np.argmin(np.abs(m - 0.7)))
    assert conv[j] == pytest.approx(0.39135226912093408, abs=1e-12)


def test_convolution_commutes():
    m = _mgrid(M=12.0, h=0.1)
    f = np.exp(-(m**2)) * (1 + 0.3j * m)
    g = np.exp(-np.abs(m) * 1.5) / (1 + m**2)
    assert np.allclose(fourier_convolve(f, g, 0.1), fourier_convolve(g, f, 0.1),
                       atol=1e-13)


def test_convolution_fourier_product():
    # F^{-1}(f) F^{-1}(g) = F^{-1}(conv) pointwise
    m = _mgrid(M=24.0, h=0.0625)
    f = np.exp(-(m**2) / 2)
    g = np.exp(-(m**2) / 3) * (1 + 0.2 * m**2) * np.exp(-np.abs(m) * 0.2)
    conv = fourier_convolve(f, g, 0.0625)
    for z in (0.0, 0.31, -0.8):
        lhs = inverse_fourier(f, m, z, beta=1.0, beta_prime=0.5) * inverse_fourier(
            g, m, z, beta=1.0, beta_prime=0.5
        )
        rhs = inverse_fourier(conv, m, z, beta=1.0, beta_prime=0.5)
        assert abs(lhs - rhs) < 1e-9
