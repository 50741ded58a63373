"""Norm and bound-probe checks on sampled grids."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qblab.errors import DomainError, GridError, ValidationError
from qblab.qkernel import QCalcParams
from qblab.spaces import (
    GridFunction2D,
    WeightParams,
    convolution_map_probe,
    ebm_norm,
    qexp_norm,
    shift_mult_bound_probe,
    weight_inverse_field,
)

P = QCalcParams(q=2.0, k=Fraction(1))
W = WeightParams(k=2.0, beta=1.0, mu=3.0)


def geometric_grid(r_lo, r_hi, per_q, p=P, angle=0.0):
    step = p.logq / per_q
    n = int(math.floor(math.log(r_hi / r_lo) / step)) + 1
    r = r_lo * np.exp(step * np.arange(n))
    return r * np.exp(1j * angle)


def mgrid(M=8.0, h=0.25):
    return np.linspace(-M, M, int(round(2 * M / h)) + 1)


# ---------------------------------------------------------------- ebm norm

def test_ebm_zero():
    m = mgrid()
    assert ebm_norm(np.zeros_like(m), m, 1.0, 2.0) == 0.0


def test_ebm_weight_inverse_is_one():
    m = mgrid()
    f = (1 + np.abs(m)) ** -2.0 * np.exp(-np.abs(m))
    assert ebm_norm(f, m, 1.0, 2.0) == pytest.approx(1.0, rel=1e-14)


def test_ebm_decaying_exponential():
    # sup of (1+|m|)^2 e^{-|m|} sits at |m| = 1 with value 4/e
    m = mgrid(M=16.0, h=0.125)
    f = np.exp(-2.0 * np.abs(m))
    assert ebm_norm(f, m, 1.0, 2.0) == pytest.approx(4.0 / math.e, rel=1e-13)


# ---------------------------------------------------------------- qexp norm

def test_qexp_zero_and_inverse():
    tau = geometric_grid(1e-2, 1e2, 8)
    m = mgrid()
    zero = GridFunction2D(tau, m, np.zeros((tau.size, m.size)))
    assert qexp_norm(zero, W, P) == 0.0
    assert qexp_norm(weight_inverse_field(tau, m, W, P), W, P) == pytest.approx(
        1.0, rel=1e-13
    )


def test_qexp_monotone_refinement():
    m = mgrid()
    rng = np.random.default_rng(5)
    tau_fine = geometric_grid(1e-2, 1e2, 16)
    vals = rng.normal(size=(tau_fine.size, m.size)) * np.exp(
        -np.abs(m)[None, :]
    )
    fine = GridFunction2D(tau_fine, m, vals)
    coarse = GridFunction2D(tau_fine[::2], m, vals[::2])
    assert qexp_norm(coarse, W, P) <= qexp_norm(fine, W, P)


@given(st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_norm_homogeneous_and_triangle(cr, ci):
    c = complex(cr, ci)
    tau = geometric_grid(0.1, 10.0, 4)
    m = mgrid(M=4.0, h=0.5)
    rng = np.random.default_rng(9)
    a = rng.normal(size=(tau.size, m.size)) + 1j * rng.normal(size=(tau.size, m.size))
    b = rng.normal(size=(tau.size, m.size)) + 1j * rng.normal(size=(tau.size, m.size))
    fa, fb = GridFunction2D(tau, m, a), GridFunction2D(tau, m, b)
    na, nb = qexp_norm(fa, W, P), qexp_norm(fb, W, P)
    nc = qexp_norm(GridFunction2D(tau, m, c * a), W, P)
    assert nc == pytest.approx(abs(c) * na, rel=1e-12, abs=1e-300)
    nsum = qexp_norm(GridFunction2D(tau, m, a + b), W, P)
    assert nsum <= (na + nb) * (1 + 1e-12)


def test_grid_shape_mismatch():
    with pytest.raises(GridError):
        GridFunction2D(np.array([1.0, 2.0]), np.array([0.0]), np.zeros((3, 1)))


# ---------------------------------------------------------------- shift probe

def random_test_family(tau, m, n=4, seed=2):
    # inverse-weight envelope times random log-radial trig modulations,
    # so the sup is realized across the whole radial range
    rng = np.random.default_rng(seed)
    base = weight_inverse_field(tau, m, W, P).values
    s = np.log(np.abs(tau))
    out = []
    for _ in range(n):
        mod = 1.0 + 0.5 * np.cos(rng.uniform(0.3, 3.0) * s + rng.uniform(0, 6.28))
        out.append(GridFunction2D(tau, m, base * mod[:, None]))
    return out


def test_shift_probe_identity_case():
    tau = geometric_grid(1e-2, 1e2, 8)
    m = mgrid()
    f = random_test_family(tau, m, n=1)[0]
    assert shift_mult_bound_probe(f, 0.0, 0.0, 0.0, W, P) <= 1.0 + 1e-12


@pytest.mark.parametrize("g1,g3", [(0.0, 1.0), (1.0, 0.5), (0.5, 1.5)])
def test_shift_probe_equality_case_bounded(g1, g3):
    # gamma2 = k*gamma3 + gamma1: ratios stay within 2x across r_max scales
    m = mgrid()
    g2 = W.k * g3 + g1
    ratios = []
    for r_max in (1e2, 1e3, 1e4):
        tau = geometric_grid(1e-2, r_max, 8)
        fam = random_test_family(tau, m)
        ratios.append(max(shift_mult_bound_probe(f, g1, g2, g3, W, P) for f in fam))
    assert max(ratios) <= 2.0 * min(ratios)
    assert all(np.isfinite(r) for r in ratios)


def test_shift_probe_violation_grows():
    # one power above the admissible line: ratio scales like r_max
    m = mgrid()
    g1, g3 = 0.0, 1.0
    g2 = W.k * g3 + g1 + 1.0
    out = []
    for r_max in (1e2, 1e4):
        tau = geometric_grid(1e-2, r_max, 8)
        f = random_test_family(tau, m, n=1)[0]
        out.append(shift_mult_bound_probe(f, g1, g2, g3, W, P))
    assert out[1] > 10.0 * out[0]


def test_shift_probe_alignment_guard():
    tau = geometric_grid(1e-2, 1e2, 8)
    m = mgrid()
    f = random_test_family(tau, m, n=1)[0]
    with pytest.raises(GridError):
        shift_mult_bound_probe(f, 0.0, 0.0, 0.3, W, P)


# ---------------------------------------------------------------- conv probe

def test_conv_probe_zero_by_convention():
    tau = geometric_grid(0.1, 10.0, 8)
    m = mgrid()
    g = weight_inverse_field(tau, m, W, P)
    assert convolution_map_probe(np.zeros(m.size), g, [1.0], [1.0], W, P) == 0.0


def test_conv_probe_gaussians_finite_and_stable():
    m = mgrid(M=12.0, h=0.125)
    f = np.exp(-(m**2))
    for per_q in (8, 16):
        tau = geometric_grid(0.1, 10.0, per_q)
        g = GridFunction2D(
            tau, m, weight_inverse_field(tau, m, W, P).values * np.exp(-(m**2))[None, :]
        )
        r = convolution_map_probe(f, g, [1.0], [1.0], W, P)
        assert 0 < r < 10.0
    m2 = mgrid(M=12.0, h=0.0625)
    f2 = np.exp(-(m2**2))
    tau = geometric_grid(0.1, 10.0, 8)
    g2 = GridFunction2D(
        tau, m2, weight_inverse_field(tau, m2, W, P).values * np.exp(-(m2**2))[None, :]
    )
    r_half = convolution_map_probe(f2, g2, [1.0], [1.0], W, P)
    tau = geometric_grid(0.1, 10.0, 8)
    g = GridFunction2D(
        tau, m, weight_inverse_field(tau, m, W, P).values * np.exp(-(m**2))[None, :]
    )
    r_base = convolution_map_probe(f, g, [1.0], [1.0], W, P)
    assert abs(r_half - r_base) < 0.05 * r_base


def test_conv_probe_degree_guards():
    tau = geometric_grid(0.1, 10.0, 8)
    m = mgrid()
    g = weight_inverse_field(tau, m, W, P)
    f = np.exp(-(m**2))
    with pytest.raises(ValidationError):
        convolution_map_probe(f, g, [1.0], [0.0, 1.0], W, P)  # deg R1 < deg R2
    w_low = WeightParams(k=2.0, beta=1.0, mu=2.0)
    with pytest.raises(ValidationError):
        # mu = deg R2 + 1 boundary
        convolution_map_probe(f, g, [0.0, 1.0], [0.0, 1.0], w_low, P)


def test_conv_probe_r1_root_guard():
    tau = geometric_grid(0.1, 10.0, 8)
    m = mgrid()
    g = weight_inverse_field(tau, m, W, P)
    f = np.exp(-(m**2))
    with pytest.raises(DomainError):
        # R1(X) = 4 + X^2 has roots at X = 2i, i.e. at m-node 2
        convolution_map_probe(f, g, [4.0, 0.0, 1.0], [1.0], W, P)
