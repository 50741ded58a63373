"""Order-k q-calculus kernels.

Everything here is parametrized by a base q > 1 and a positive rational
order k. The central objects:

* the bilateral theta series

  .. math:: \\Theta(x) = \\sum_{n=-\\infty}^{\\infty} q^{-n(n-1)/(2k)} x^n

  with its dilation law ``Theta(q^{m/k} x) = q^{m(m+1)/(2k)} x^m Theta(x)``
  and the associated lower-bound margin away from the zero set
  ``{-q^{-m/k}}``,

* the normalizing constant ``pi_q_k = (log q / k) * prod_{n>=0}
  (1 - q^{-(n+1)/k})^{-1}``,

* the secondary real branch of Lambert W (needed by the mixed-order
  envelope machinery),

* formal q-Borel transforms of truncated power series, the q-Laplace ray
  integral with the theta kernel, and plain inverse Fourier / convolution
  quadratures on uniform frequency grids.

Exponent bookkeeping (``n(n-1)/(2k)``, ``m/k`` node shifts) is done in
``fractions.Fraction`` so dilations land exactly on geometric grids.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import AccuracyError, DomainError, GridError, RangeError

__all__ = [
    "QCalcParams",
    "theta_q",
    "theta_q_log",
    "theta_admissibility",
    "theta_lower_bound_margin",
    "pi_q_k",
    "lambert_w_minus1",
    "TruncatedSeries",
    "formal_q_borel",
    "q_laplace_ray",
    "RayQuadResult",
    "inverse_fourier",
    "fourier_convolve",
    "logsum_complex",
]

# Largest exponent exp() accepts before float64 overflow.
_EXP_CAP = 709.0


@dataclass(frozen=True)
class QCalcParams:
    """Base and order for the q-calculus kernels.

    q must exceed 1; k is a positive rational kept exact so that exponents
    n(n-1)/(2k) and node ratios q^{1/(N k)} stay on one lattice.
    """

    q: float
    k: Fraction = Fraction(1)
    series_tol: float = 1e-14

    def __post_init__(self):
        if not self.q > 1.0:
            raise DomainError(f"base q must be > 1, got {self.q}")
        k = self.k if isinstance(self.k, Fraction) else Fraction(self.k)
        object.__setattr__(self, "k", k)
        if k <= 0:
            raise DomainError(f"order k must be positive, got {k}")
        if not (0.0 < self.series_tol < 1e-2):
            raise DomainError(f"series_tol out of range: {self.series_tol}")

    @property
    def kf(self) -> float:
        return float(self.k)

    @property
    def logq(self) -> float:
        return math.log(self.q)

    def q_pow(self, expo) -> float:
        """q raised to an exact rational exponent."""
        # pow, not exp(e log q): exact whenever the result is representable
        return self.q ** float(Fraction(expo))


def _theta_term_range(p: QCalcParams, logabs_x: float) -> tuple[int, int]:
    # Peak of Re(log term) = -n(n-1)L/(2k) + n*log|x| sits at
    # n* = 1/2 + k log|x|/L; terms fall off like a Gaussian with scale
    # sqrt(k/L), so a half-width from the tolerance covers the mass.
    L = p.logq
    kf = p.kf
    centre = 0.5 + kf * logabs_x / L
    half = math.sqrt(max(2.0 * kf * (-math.log(p.series_tol / 1e4)) / L, 1.0)) + 3.0
    return math.floor(centre - half), math.ceil(centre + half)


def _theta_log_terms(p: QCalcParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Matrix of complex log-terms for the bilateral series, one row per x."""
    ax = np.abs(x)
    if np.any(ax == 0.0) or np.any(~np.isfinite(ax)):
        raise DomainError("theta series requires finite nonzero x")
    la = np.log(ax)
    n_lo, _ = _theta_term_range(p, float(la.min()))
    _, n_hi = _theta_term_range(p, float(la.max()))
    n = np.arange(n_lo, n_hi + 1)
    L = p.logq
    kf = p.kf
    # exponents n(n-1)/(2k) are rational; the float of the Fraction keeps
    # dilation tests exactly consistent with q_pow
    gauss = np.array(
        [float(Fraction(m * (m - 1)) / (2 * p.k)) for m in n], dtype=float
    )
    logx = np.log(x.astype(complex))
    return n, -gauss[None, :] * L + n[None, :] * logx[:, None]


def logsum_complex(logterms: np.ndarray, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """Stable sum of exp(logterms) along an axis.

    Returns (log magnitude, phase) of the sum; magnitudes may represent
    numbers far outside float range.
    """
    re = logterms.real
    m = np.max(re, axis=axis, keepdims=True)
    s = np.sum(np.exp(logterms - m), axis=axis)
    mag = np.squeeze(m, axis=axis) + np.log(np.abs(s))
    return mag, np.angle(s)


def theta_q_log(p: QCalcParams, x) -> tuple[np.ndarray, np.ndarray]:
    """log|Theta(x)| and arg Theta(x), stable at any magnitude."""
    xv = np.atleast_1d(np.asarray(x, dtype=complex))
    _, lt = _theta_log_terms(p, xv)
    mag, ph = logsum_complex(lt, axis=1)
    if np.isscalar(x) or np.ndim(x) == 0:
        return mag[0], ph[0]
    return mag, ph


def theta_q(p: QCalcParams, x) -> complex:
    """Bilateral theta series at a single point.

    Terms are accumulated symmetrically around the peak index until the
    next term drops below series_tol/10 of the largest one; the result is
    assembled from a factored maximum so intermediate terms never overflow.
    Raises RangeError when the value itself cannot be represented.
    """
    xv = np.array([complex(x)])
    n, lt = _theta_log_terms(p, xv)
    mag, ph = logsum_complex(lt, axis=1)
    if mag[0] > _EXP_CAP:
        worst = n[int(np.argmax(lt.real[0]))]
        raise RangeError(
            f"theta value exceeds float range at x={x!r} (peak term index {worst})"
        )
    return complex(math.exp(mag[0]) * cmath.exp(1j * ph[0]))


def theta_admissibility(p: QCalcParams, x, dtilde: float) -> np.ndarray:
    """min over m of |1 + x q^{m/k}|, the distance-to-zero-set margin.

    Only indices with |x| q^{m/k} inside (1-dtilde, 1+dtilde) can violate
    the margin; a small padded window around them is scanned.
    """
    if not 0.0 < dtilde < 1.0:
        raise DomainError(f"dtilde must lie in (0,1), got {dtilde}")
    xv = np.atleast_1d(np.asarray(x, dtype=complex))
    if np.any(xv == 0):
        raise DomainError("x = 0 is not on the theta domain")
    L = p.logq
    kf = p.kf
    la = np.log(np.abs(xv))
    # indices where the modulus of x q^{m/k} is near 1
    m_lo = np.floor(kf * (math.log(max(1.0 - dtilde, 1e-12)) - la) / L).astype(int) - 1
    m_hi = np.ceil(kf * (math.log(1.0 + dtilde) - la) / L).astype(int) + 1
    out = np.empty(xv.shape, dtype=float)
    for i, xx in enumerate(xv):
        ms = np.arange(m_lo[i], m_hi[i] + 1)
        shifts = np.array([p.q_pow(Fraction(int(m), 1) / p.k) for m in ms])
        out[i] = np.min(np.abs(1.0 + xx * shifts)) if len(ms) else np.inf
    if np.isscalar(x) or np.ndim(x) == 0:
        return out[0]
    return out


def theta_lower_bound_margin(p: QCalcParams, x, dtilde: float):
    """Ratio of |Theta(x)| to the q-exponential envelope.

    The envelope is dtilde * exp(k log^2|x| / (2 log q)) * |x|^{1/2}; the
    infimum of the returned ratio over admissible x plays the role of the
    direction constant C_{q,k}. Points closer than dtilde to the zero set
    raise DomainError.
    """
    xv = np.atleast_1d(np.asarray(x, dtype=complex))
    margin = np.atleast_1d(theta_admissibility(p, xv, dtilde))
    bad = margin <= dtilde
    if np.any(bad):
        j = int(np.argmax(bad))
        raise DomainError(
            f"x={xv[j]!r} violates the margin: |1+x q^(m/k)| = {margin[j]:.3e} <= {dtilde}"
        )
    mag, _ = theta_q_log(p, xv)
    mag = np.atleast_1d(mag)
    la = np.log(np.abs(xv))
    envelope = math.log(dtilde) + p.kf * la**2 / (2.0 * p.logq) + 0.5 * la
    ratio = np.exp(mag - envelope)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(ratio[0])
    return ratio


def pi_q_k(p: QCalcParams) -> float:
    """Normalizing constant of the q-Laplace kernel.

    (log q / k) * prod_{n>=0} (1 - q^{-(n+1)/k})^{-1}; the product is cut
    once the next factor differs from 1 by less than series_tol/10.
    """
    L = p.logq
    kf = p.kf
    n_max = int(math.ceil(kf * math.log(10.0 / p.series_tol) / L)) + 2
    prod = 1.0
    for n in range(n_max):
        prod *= 1.0 - p.q_pow(Fraction(-(n + 1), 1) / p.k)
    return L / kf / prod


def lambert_w_minus1(y: float, tol: float = 1e-13) -> float:
    """Secondary real branch of Lambert W on (-1/e, 0).

    The starting point is the midpoint of the bracket
    (-1-sqrt(2u)-u, -1-sqrt(2u)-2u/3) with u = -1 - log(-y), and Newton
    runs on w + log(-w) = log(-y), falling back to bisection on the
    bracket whenever a step would leave it.
    """
    if not (isinstance(y, (int, float)) and -1.0 / math.e < y < 0.0):
        if isinstance(y, (int, float)) and y == -1.0 / math.e:
            return -1.0
        raise DomainError(f"W_(-1) needs y in (-1/e, 0), got {y!r}")
    u = -1.0 - math.log(-y)
    if u <= 0.0:
        # y within one ulp of -1/e
        return -1.0
    root = math.sqrt(2.0 * u)
    lo = -1.0 - root - u          # true value is above this
    hi = -1.0 - root - 2.0 * u / 3.0
    w = 0.5 * (lo + hi)
    target = math.log(-y)
    for _ in range(80):
        g = w + math.log(-w) - target
        if abs(g) < tol * max(1.0, abs(w)):
            break
        step = g * w / (w + 1.0)     # Newton on w + log(-w)
        wn = w - step
        if not (lo <= wn <= hi):
            # keep the bracket tight around the root: g is increasing in w
            if g > 0:
                hi = min(hi, w)
            else:
                lo = max(lo, w)
            wn = 0.5 * (lo + hi)
        w = wn
    return w


@dataclass
class TruncatedSeries:
    """Finite power series sum_n a_n T^n with exact dilation bookkeeping."""

    coeff: np.ndarray

    def __post_init__(self):
        self.coeff = np.asarray(self.coeff, dtype=complex)

    def mul_pow(self, m: int) -> "TruncatedSeries":
        """Multiply by T^m (m >= 0)."""
        if m < 0:
            raise DomainError("only nonnegative monomial shifts on series")
        return TruncatedSeries(np.concatenate([np.zeros(m, complex), self.coeff]))

    def dilate(self, p: QCalcParams, j) -> "TruncatedSeries":
        """Apply sigma_q^j: a_n -> a_n q^{j n}; j may be rational."""
        j = Fraction(j)
        n = np.arange(len(self.coeff))
        fac = np.array([p.q_pow(j * int(m)) for m in n])
        return TruncatedSeries(self.coeff * fac)

    def scale(self, c: complex) -> "TruncatedSeries":
        return TruncatedSeries(self.coeff * c)

    def __len__(self) -> int:
        return len(self.coeff)


def formal_q_borel(series: TruncatedSeries, p: QCalcParams) -> TruncatedSeries:
    """Formal q-Borel transform of order k: a_n -> a_n q^{-n(n-1)/(2k)}."""
    n = np.arange(len(series.coeff))
    fac = np.array([p.q_pow(Fraction(-int(m) * (int(m) - 1)) / (2 * p.k)) for m in n])
    return TruncatedSeries(series.coeff * fac)


@dataclass
class RayQuadResult:
    """One ray quadrature: value, self-estimated error, tail report."""

    value: complex
    err_estimate: float
    tail_frac: float
    nodes: int


def q_laplace_ray(
    f: Callable[[np.ndarray], np.ndarray],
    gamma: float,
    T: complex,
    p: QCalcParams,
    *,
    alpha: float = 0.0,
    dtilde: float = 0.1,
    r_lo: float = 1e-9,
    r_hi: float = 1e3,
    nodes_per_decade: int = 80,
    tail_tol: float = 1e-10,
) -> RayQuadResult:
    """q-Laplace transform of order k along the ray arg u = gamma.

    (1/pi_q_k) * int_0^inf f(r e^{i gamma}) / Theta(u/T) dr/r, as a
    trapezoid rule in log r. ``alpha`` declares the power-growth order of
    f so the |T| smallness condition |T| <= q^{(1/2-alpha)/k}/2 can be
    enforced; ``dtilde`` is the required margin of u/T to the kernel's
    zero set, checked nodewise.
    """
    if not (r_lo > 0 and r_hi > r_lo):
        raise DomainError("need 0 < r_lo < r_hi")
    Tlim = 0.5 * p.q_pow((Fraction(1, 2) - Fraction(alpha).limit_denominator(10**6)) / p.k)
    if abs(T) > Tlim:
        raise DomainError(
            f"|T|={abs(T):.4g} exceeds the kernel radius {Tlim:.4g} for growth order {alpha}"
        )
    n_nodes = max(int(math.ceil(nodes_per_decade * math.log10(r_hi / r_lo))), 16) + 1
    s = np.linspace(math.log(r_lo), math.log(r_hi), n_nodes)
    h = s[1] - s[0]
    u = np.exp(s) * cmath.exp(1j * gamma)
    x = u / T
    margin = theta_admissibility(p, x, dtilde)
    if np.min(margin) <= dtilde:
        j = int(np.argmin(margin))
        raise DomainError(
            f"ray node r={np.exp(s[j]):.4g} too close to the kernel zero set "
            f"(margin {margin[j]:.3e} <= dtilde={dtilde})"
        )
    lmag, ph = theta_q_log(p, x)
    fv = np.asarray(f(u), dtype=complex)
    integrand = fv * np.exp(-lmag - 1j * ph)
    w = np.full(n_nodes, h)
    w[0] = w[-1] = h / 2.0
    total = np.sum(integrand * w)
    # self-check: trapezoid on every other node
    idx = np.arange(0, n_nodes, 2)
    w2 = np.full(idx.shape, 2.0 * h)
    w2[0] = h
    w2[-1] = h if (n_nodes % 2) else 2.0 * h
    half = np.sum(integrand[idx] * w2)
    scale = np.max(np.abs(integrand))
    if scale > 0:
        tail = max(abs(integrand[0]), abs(integrand[-1])) / scale
        if tail > tail_tol:
            raise AccuracyError(
                f"ray integrand not negligible at the span ends (tail frac {tail:.2e}); "
                "widen [r_lo, r_hi]"
            )
    else:
        tail = 0.0
    piq = pi_q_k(p)
    return RayQuadResult(
        value=complex(total / piq),
        err_estimate=float(abs(total - half) / piq),
        tail_frac=float(tail),
        nodes=n_nodes,
    )


def inverse_fourier(
    samples: np.ndarray,
    m_grid: np.ndarray,
    z,
    *,
    beta: float,
    beta_prime: float,
) -> complex:
    """(2 pi)^{-1/2} int f(m) e^{izm} dm by the trapezoid rule.

    The profile must decay like e^{-beta|m|}; evaluation points keep
    |Im z| <= beta_prime < beta so the integrand still decays at the grid
    edges. The edge magnitude is checked against the interior scale.
    """
    if not 0.0 <= beta_prime < beta:
        raise DomainError(f"need 0 <= beta_prime < beta, got {beta_prime}, {beta}")
    z = complex(z)
    if abs(z.imag) > beta_prime + 1e-15:
        raise DomainError(f"|Im z| = {abs(z.imag):.4g} exceeds beta_prime = {beta_prime}")
    m = np.asarray(m_grid, float)
    fv = np.asarray(samples, complex)
    if m.shape != fv.shape:
        raise GridError("samples and m grid differ in shape")
    integrand = fv * np.exp(1j * z * m)
    val = np.trapezoid(integrand, m) / math.sqrt(2.0 * math.pi)
    scale = np.max(np.abs(integrand))
    if scale > 0:
        edge = max(abs(integrand[0]), abs(integrand[-1])) / scale
        if edge > 1e-6:
            raise AccuracyError(
                f"Fourier integrand not decayed at the m-grid edge (frac {edge:.2e})"
            )
    return complex(val)


def fourier_convolve(f: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """(2 pi)^{-1/2} int f(m - m1) g(m1) dm1 on a shared uniform odd grid.

    Both arrays must sample the same symmetric grid with spacing h; the
    result is returned on that grid, with f treated as zero outside it
    (legitimate only for profiles that decay at the edges).
    """
    f = np.asarray(f, complex)
    g = np.asarray(g, complex)
    if f.shape != g.shape or f.ndim != 1:
        raise GridError("convolution needs two 1-d arrays on one grid")
    n = f.shape[0]
    if n % 2 != 1:
        raise GridError("convolution grid must be symmetric (odd length)")
    k = (n - 1) // 2
    full = np.convolve(f, g)
    return full[k : k + n] * h / math.sqrt(2.0 * math.pi)
