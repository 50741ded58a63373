"""Weighted sup norms over sampled grids, and empirical bound probes.

Two weight families appear throughout the solver:

* a Fourier-side weight ``(1+|m|)^mu * exp(beta |m|)`` penalizing slow
  decay in the frequency variable,
* a Borel-side weight ``exp(-k log^2(|tau|+delta)/(2 log q)
  - alpha log(|tau|+delta))`` cancelling q-exponential growth of order k
  along the radial variable.

Norms here are suprema over grid nodes, not over the continuum; they are
monotone under refinement (adding nodes can only raise a sup), and every
claim built on them is stated at a fixed grid together with a
refinement-stability check.

The two ``*_probe`` functions measure operator norms empirically: they
report the ratio achieved by concrete test functions instead of asserting
any a priori constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridError, ValidationError
from .qkernel import QCalcParams, fourier_convolve

__all__ = [
    "WeightParams",
    "GridFunction2D",
    "ebm_norm",
    "qexp_norm",
    "ebm_log_weight",
    "qexp_log_weight",
    "weight_inverse_field",
    "shift_mult_bound_probe",
    "convolution_map_probe",
    "poly_eval",
    "poly_degree",
]


@dataclass(frozen=True)
class WeightParams:
    """Parameters of the weighted norm and of the sector it lives on.

    k is the q-exponential growth order being cancelled, beta/mu the
    Fourier decay rates, alpha a radial power offset, delta_off the shift
    inside log(|tau|+delta_off), rho the radius of the central disc, and
    direction/aperture describe the radial sector.
    """

    k: float
    beta: float
    mu: float
    alpha: float = 0.0
    delta_off: float = 2.0
    rho: float = 1.0
    direction: float = 0.0
    aperture: float = math.pi / 4

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ValidationError("growth order k must be positive")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if not self.mu > 1:
            raise ValidationError("mu must exceed 1")
        if not self.delta_off > 1:
            raise ValidationError("delta_off must exceed 1")
        if not self.rho > 0:
            raise ValidationError("rho must be positive")
        if not self.aperture > 0:
            raise ValidationError("aperture must be positive")


@dataclass
class GridFunction2D:
    """Complex samples on (radial tau nodes) x (uniform m nodes)."""

    tau_nodes: np.ndarray
    m_nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.tau_nodes = np.asarray(self.tau_nodes, complex)
        self.m_nodes = np.asarray(self.m_nodes, float)
        self.values = np.asarray(self.values, complex)
        if self.values.shape != (self.tau_nodes.size, self.m_nodes.size):
            raise GridError(
                f"value shape {self.values.shape} does not match "
                f"{self.tau_nodes.size} tau nodes x {self.m_nodes.size} m nodes"
            )
        r = np.abs(self.tau_nodes)
        if self.tau_nodes.size > 1 and not np.all(np.diff(r) > 0):
            raise GridError("radial nodes must be strictly increasing in modulus")
        if self.m_nodes.size > 1:
            dm = np.diff(self.m_nodes)
            if not np.allclose(dm, dm[0], rtol=1e-12, atol=0):
                raise GridError("m grid must be uniform")

    @property
    def m_step(self) -> float:
        return float(self.m_nodes[1] - self.m_nodes[0])


def ebm_log_weight(m: np.ndarray, beta: float, mu: float) -> np.ndarray:
    """log of the Fourier-side weight (1+|m|)^mu e^{beta|m|}."""
    am = np.abs(np.asarray(m, float))
    return mu * np.log1p(am) + beta * am


def qexp_log_weight(tau_abs: np.ndarray, w: WeightParams, p: QCalcParams) -> np.ndarray:
    """log of the radial weight, the reciprocal of the allowed growth."""
    lt = np.log(np.asarray(tau_abs, float) + w.delta_off)
    return -(w.k * lt**2 / (2.0 * p.logq) + w.alpha * lt)


def ebm_norm(values: np.ndarray, m_nodes: np.ndarray, beta: float, mu: float) -> float:
    """Grid supremum of (1+|m|)^mu e^{beta|m|} |f(m)|."""
    values = np.asarray(values)
    if values.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        logv = np.log(np.abs(values))
    top = np.max(logv + ebm_log_weight(m_nodes, beta, mu))
    return float(np.exp(top))


def qexp_norm(f: GridFunction2D, w: WeightParams, p: QCalcParams) -> float:
    """Grid supremum of the doubly weighted modulus of f(tau, m)."""
    if f.values.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        logv = np.log(np.abs(f.values))
    total = (
        logv
        + qexp_log_weight(np.abs(f.tau_nodes), w, p)[:, None]
        + ebm_log_weight(f.m_nodes, w.beta, w.mu)[None, :]
    )
    return float(np.exp(np.max(total)))


def weight_inverse_field(
    tau_nodes: np.ndarray, m_nodes: np.ndarray, w: WeightParams, p: QCalcParams
) -> GridFunction2D:
    """The extremal field whose weighted modulus is 1 at every node."""
    vals = np.exp(
        -qexp_log_weight(np.abs(np.asarray(tau_nodes)), w, p)[:, None]
        - ebm_log_weight(np.asarray(m_nodes), w.beta, w.mu)[None, :]
    ).astype(complex)
    return GridFunction2D(tau_nodes, m_nodes, vals)


def poly_degree(coeff) -> int:
    """Degree of a lowest-first coefficient list; -1 for the zero polynomial."""
    arr = np.atleast_1d(np.asarray(coeff))
    nz = np.nonzero(arr)[0]
    return int(nz[-1]) if nz.size else -1


def poly_eval(coeff, x) -> np.ndarray:
    """Evaluate a lowest-first coefficient list (Horner)."""
    arr = np.atleast_1d(np.asarray(coeff, complex))
    out = np.zeros_like(np.asarray(x, complex))
    for c in arr[::-1]:
        out = out * x + c
    return out


def _grid_step_qexp(f: GridFunction2D, p: QCalcParams) -> float:
    # log-q step of the geometric radial grid
    r = np.abs(f.tau_nodes)
    steps = np.diff(np.log(r)) / p.logq
    if steps.size == 0:
        raise GridError("need at least two radial nodes to infer the grid step")
    if not np.allclose(steps, steps[0], rtol=1e-10, atol=0):
        raise GridError("radial grid is not geometric")
    return float(steps[0])


def shift_mult_bound_probe(
    f: GridFunction2D,
    gamma1: float,
    gamma2: float,
    gamma3: float,
    w: WeightParams,
    p: QCalcParams,
) -> float:
    """Weighted-norm ratio of (1+|tau|)^{-gamma1} tau^{gamma2} f(q^{-gamma3} tau).

    The inward dilation must land on grid nodes, so gamma3 has to be an
    integer multiple of the grid's log-q step.  When
    gamma2 <= k*gamma3 + gamma1 the returned ratio stays bounded as the
    grid's outer radius grows; past that line it grows with r_max.
    """
    if min(gamma1, gamma2, gamma3) < 0:
        raise ValidationError("gamma exponents must be nonnegative")
    step = _grid_step_qexp(f, p)
    shift_f = gamma3 / step
    shift = round(shift_f)
    if abs(shift_f - shift) > 1e-9:
        raise GridError(
            f"gamma3={gamma3} is not a multiple of the grid step {step} in log q"
        )
    if shift >= f.tau_nodes.size:
        raise GridError("dilation shifts every node off the grid")
    tau = f.tau_nodes[shift:]
    factor = (1.0 + np.abs(tau)) ** (-gamma1) * tau**gamma2
    vals = factor[:, None] * f.values[: f.tau_nodes.size - shift]
    top = qexp_norm(GridFunction2D(tau, f.m_nodes, vals), w, p)
    bottom = qexp_norm(f, w, p)
    if bottom == 0.0:
        return 0.0
    return top / bottom


def convolution_map_probe(
    f: np.ndarray,
    g: GridFunction2D,
    r1_coeff,
    r2_coeff,
    w: WeightParams,
    p: QCalcParams,
) -> float:
    """Norm ratio of Phi(tau,m) = R1(im)^{-1} (f * R2(i.)g(tau,.))(m).

    Requires deg R1 >= deg R2, R1 without zeros on the imaginary axis
    samples, and mu > deg R2 + 1 so the weighted convolution converges.
    Returns ||Phi|| / (||f||_{beta,mu} ||g||), 0 when either factor is 0.
    """
    f = np.asarray(f, complex)
    d1, d2 = poly_degree(r1_coeff), poly_degree(r2_coeff)
    if d1 < d2:
        raise ValidationError(f"deg R1 = {d1} < deg R2 = {d2}")
    if not w.mu > d2 + 1:
        raise ValidationError(f"mu = {w.mu} must exceed deg R2 + 1 = {d2 + 1}")
    im = 1j * g.m_nodes
    r1 = poly_eval(r1_coeff, im)
    if np.min(np.abs(r1)) < 1e-12:
        j = int(np.argmin(np.abs(r1)))
        raise DomainError(f"R1(im) vanishes at m = {g.m_nodes[j]}")
    r2g = poly_eval(r2_coeff, im)[None, :] * g.values
    h = g.m_step
    phi = np.empty_like(g.values)
    for i in range(g.tau_nodes.size):
        phi[i] = fourier_convolve(f, r2g[i], h) / r1
    top = qexp_norm(GridFunction2D(g.tau_nodes, g.m_nodes, phi), w, p)
    bottom = ebm_norm(f, g.m_nodes, w.beta, w.mu) * qexp_norm(g, w, p)
    if bottom == 0.0:
        return 0.0
    return top / bottom
