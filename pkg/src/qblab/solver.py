"""Fixed point in the Borel plane, kernel assembly, cocycle decomposition.

The auxiliary convolution equation is solved by Picard iteration of the
affine map

    H(w)(tau, m) = [ psi(tau, m)
                     + sum_l coef_l(eps) tau^{p_l} Conv_m(C_l, R_l(im) w(q^{a_l} tau))
                   ] / P_m(tau)

on per-angle radial chains whose nodes form an exact geometric
progression with ratio q^{1/(N_sub k1)}.  Every dilation exponent a_l is
a negative rational whose product with N_sub k1 is an integer, so
w(q^{a_l} tau) is a pure index shift toward the origin; the few nodes
pushed below the stored window fall back to psi/P_m, the image of zero
under the map, whose defect there is quadratically small in the radius.

Analytic values are assembled from the solved field by a log-radial
trapezoid quadrature of

    U(T1, T2, m) = (1/pi_q) int w(u, m) e^{-(1/T2)^{k2} u} / Theta(u/T1) du/u

along a ray, carried in the log domain so magnitudes far outside float
range survive, followed by an inverse Fourier integral in m.  The
difference of two consecutive sector solutions splits into two truncated
rays plus an arc at radius rho/2; that split is the quantitative
instrument behind the flatness measurements, because it stays meaningful
long after the direct subtraction has hit float cancellation.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import (
    AccuracyError,
    DivergenceError,
    DomainError,
    GeometryError,
    GridError,
)
from .problem import (
    ProblemSpec,
    SectorCovering,
    epsilon_power,
    pm_eval,
    pm_roots,
)
from .qkernel import (
    QCalcParams,
    logsum_complex,
    pi_q_k,
    theta_admissibility,
    theta_q_log,
)
from .spaces import GridFunction2D, WeightParams, poly_eval, qexp_norm

__all__ = [
    "OmegaField",
    "SolveReport",
    "AssembledValues",
    "DifferenceReport",
    "solution_weight",
    "default_n_sub",
    "solve_omega",
    "apply_H",
    "equation_residual_e3",
    "assemble_U",
    "assemble_u",
    "log_fourier_integral",
    "operator_identity_check",
    "equation_residual_e2",
    "equation_residual_e1",
    "deformation_arc_angles",
    "solution_difference",
    "export_omega_csv",
    "complex_power",
]

_TWO_PI = 2.0 * math.pi


def solution_weight(s: ProblemSpec) -> WeightParams:
    """Weight class the Borel-plane solution is measured in."""
    return WeightParams(
        k=float(s.k1p),
        beta=s.beta,
        mu=s.mu,
        alpha=s.alpha,
        delta_off=s.delta_off,
        rho=s.rho,
    )


def complex_power(base: complex, expo) -> complex:
    """Principal-branch power with a rational exponent."""
    return epsilon_power(base, Fraction(expo))


# ------------------------------------------------------------------ field

@dataclass
class OmegaField:
    """Solution samples on radial chains, dilation-aligned by construction.

    ``grid`` holds the chain along ``direction`` spanning the disc and the
    unbounded sector; ``arcs`` maps extra angles to chains restricted to
    the disc, kept for arc quadratures.  Node j of a chain sits at radius
    anchor * exp(step * j) with anchor = rho/2, so j = 0 is the disc rim
    and the node ratio is exactly q^(1/(n_sub k1)).
    """

    direction: float
    epsilon: complex
    grid: GridFunction2D
    iterations: int
    final_update_norm: float
    n_sub: int
    anchor: float
    step: float
    j_lo: int
    arcs: dict = field(default_factory=dict)

    def chain_grid(self, angle: float) -> GridFunction2D:
        if abs(math.remainder(angle - self.direction, _TWO_PI)) < 1e-12:
            return self.grid
        for a, g in self.arcs.items():
            if abs(math.remainder(angle - a, _TWO_PI)) < 1e-12:
                return g
        raise GridError(f"no chain solved at angle {angle:.6f}")

    def norm(self, s: ProblemSpec) -> float:
        w = solution_weight(s)
        n = qexp_norm(self.grid, w, s.qcalc)
        for g in self.arcs.values():
            n = max(n, qexp_norm(g, w, s.qcalc))
        return n


@dataclass
class SolveReport:
    contraction_estimates: list
    residual: float
    norm: float
    ball_radius: float
    iterations: int = 0
    converged: bool = False
    update_norms: list = field(default_factory=list)
    uniqueness_gap: float = math.nan
    holomorphy_defect: float = math.nan


# ------------------------------------------------------------------ lattice

def default_n_sub(s: ProblemSpec, oversample: int = 8) -> int:
    """Smallest lattice density making every dilation an exact shift."""
    den = 1
    for t in s.perturbation_terms():
        den = den * t.dilation.denominator // math.gcd(den, t.dilation.denominator)
    return den * oversample


def _chain_shift(expo: Fraction, n_sub: int, k1: int) -> int:
    steps = expo * n_sub * k1
    if steps.denominator != 1:
        raise GridError(
            f"dilation exponent {expo} is not aligned with the lattice "
            f"(product with {n_sub * k1} must be an integer)"
        )
    return int(steps)


class _ChainContext:
    """Precomputed data for Picard sweeps on one angle chain."""

    def __init__(
        self,
        s: ProblemSpec,
        epsilon: complex,
        angle: float,
        j_lo: int,
        j_hi: int,
        m_nodes: np.ndarray,
        n_sub: int,
        cp_floor: float = 1e-4,
    ):
        self.epsilon = complex(epsilon)
        self.angle = float(angle)
        self.j_lo, self.j_hi = int(j_lo), int(j_hi)
        self.m_nodes = m_nodes
        self.n_sub = int(n_sub)
        self.step = s.logq / (n_sub * s.k1)
        self.anchor = s.rho / 2.0
        js = np.arange(self.j_lo, self.j_hi + 1)
        self.radii = self.anchor * np.exp(self.step * js)
        self.tau = self.radii * cmath.exp(1j * self.angle)
        self.pm = pm_eval(s, self.tau[:, None], m_nodes[None, :])
        # the characteristic polynomial must stay separated from zero in
        # the normalized sense everywhere on the chain
        rmod = np.abs(poly_eval(s.R_main, 1j * m_nodes))
        denom = rmod[None, :] * (1.0 + np.abs(self.tau[:, None])) ** float(
            s.d_main + s.delta_tilde_main
        )
        ratio = np.abs(self.pm) / denom
        if float(np.min(ratio)) < cp_floor:
            i, j = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
            raise GeometryError(
                f"characteristic polynomial too close to a root at tau="
                f"{self.tau[i]:.6g}, m={m_nodes[j]:.4g} "
                f"(normalized {ratio[i, j]:.3e} < {cp_floor}); "
                "pick a direction farther from the root rays"
            )
        self.psi = s.psi_eval(self.tau, m_nodes, epsilon)
        self.base = self.psi / self.pm  # image of the zero field
        h = float(m_nodes[1] - m_nodes[0])
        nm = m_nodes.size
        self.slice_lo = (nm - 1) // 2
        self.fft_len = 1
        while self.fft_len < 2 * nm - 1:
            self.fft_len *= 2
        self.terms = []
        for t in s.perturbation_terms():
            shift = _chain_shift(t.dilation, n_sub, s.k1)
            if shift >= 0:
                raise GridError(
                    f"term (l1={t.l1}, l2={t.l2}) has dilation {t.dilation}; "
                    "the map must move strictly inward"
                )
            # rows pushed below the window use the image of zero there
            tau_below = (
                self.anchor
                * np.exp(self.step * np.arange(self.j_lo + shift, self.j_lo))
                * cmath.exp(1j * self.angle)
            )
            fb = s.psi_eval(tau_below, m_nodes, epsilon) / pm_eval(
                s, tau_below[:, None], m_nodes[None, :]
            )
            self.terms.append(
                {
                    "coeff": t.coefficient(epsilon),
                    "tau_pow": complex_power(cmath.exp(1j * self.angle), t.tau_power)
                    * self.radii ** float(t.tau_power),
                    "shift": shift,
                    "c_fft": np.fft.fft(t.c_profile(m_nodes, epsilon), self.fft_len),
                    "r_im": poly_eval(np.asarray(t.r_coeff, complex), 1j * m_nodes),
                    "fallback": fb,
                    "conv_scale": h / math.sqrt(_TWO_PI),
                }
            )

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.psi.copy()
        nm = self.m_nodes.size
        lo = self.slice_lo
        for t in self.terms:
            sft = t["shift"]
            shifted = np.vstack([t["fallback"], v[:sft, :]])
            rows = t["r_im"][None, :] * shifted
            conv = np.fft.ifft(
                np.fft.fft(rows, self.fft_len, axis=1) * t["c_fft"], axis=1
            )[:, lo : lo + nm] * t["conv_scale"]
            out = out + (t["coeff"] * t["tau_pow"])[:, None] * conv
        return out / self.pm

    def grid(self, values: np.ndarray) -> GridFunction2D:
        return GridFunction2D(self.tau, self.m_nodes, values)


def _solve_chain(ctx, s, tol, max_iter, start=None):
    """Picard iteration on one chain; returns values and iteration stats."""
    w = solution_weight(s)
    p = s.qcalc
    v = ctx.base.copy() if start is None else np.array(start, complex)
    updates, ratios = [], []
    bad_streak = 0
    for it in range(1, max_iter + 1):
        nv = ctx.apply(v)
        upd = qexp_norm(ctx.grid(nv - v), w, p)
        updates.append(upd)
        if len(updates) >= 2 and updates[-2] > 0:
            r = upd / updates[-2]
            ratios.append(r)
            bad_streak = bad_streak + 1 if r >= 1.0 else 0
            if bad_streak >= 3:
                raise DivergenceError(
                    f"fixed-point map fails to contract at epsilon = "
                    f"{ctx.epsilon:.6g} (last update ratios "
                    f"{[round(x, 3) for x in ratios[-3:]]}); reduce epsilon0 "
                    "or scale down the forcing and coefficients"
                )
        v = nv
        if upd <= tol * max(1.0, qexp_norm(ctx.grid(v), w, p)):
            return v, it, updates, ratios, True
    return v, max_iter, updates, ratios, False


# ------------------------------------------------------------------ solve

def solve_omega(
    s: ProblemSpec,
    d: float,
    epsilon: complex,
    tol: float = 1e-12,
    max_iter: int = 200,
    *,
    n_sub: int = None,
    r_min_factor: float = 1e-8,
    r_max: float = 2e3,
    arc_angles=None,
    m_nodes: np.ndarray = None,
    check_residual: bool = True,
    check_uniqueness: bool = False,
    probe_holomorphy: bool = False,
    cp_floor: float = 1e-4,
    enforce_disc: bool = True,
) -> tuple[OmegaField, SolveReport]:
    """Solve the convolution equation along direction d at one epsilon.

    The main chain spans radii from r_min_factor * rho/2 out to r_max;
    optional arc chains, restricted to the disc, are solved at the given
    angles on the same lattice.  Iteration starts at psi/P_m and stops
    once the weighted update norm falls below tol (relative to the field
    norm); the reported residual is recomputed on a lattice twice as
    dense, so it sees the solution between stored nodes.
    """
    if abs(epsilon) == 0:
        raise DomainError("epsilon must be nonzero")
    if enforce_disc and abs(epsilon) > s.epsilon0:
        raise DomainError(
            f"|epsilon| = {abs(epsilon):.4g} is outside the punctured disc "
            f"of radius {s.epsilon0}"
        )
    n_sub = default_n_sub(s) if n_sub is None else int(n_sub)
    m_nodes = s.m_grid() if m_nodes is None else np.asarray(m_nodes, float)
    step = s.logq / (n_sub * s.k1)
    j_lo = -int(math.ceil(math.log(1.0 / r_min_factor) / step))
    j_hi = int(math.ceil(math.log(r_max / (s.rho / 2.0)) / step))

    ctx = _ChainContext(s, epsilon, d, j_lo, j_hi, m_nodes, n_sub, cp_floor)
    v, iters, updates, ratios, ok = _solve_chain(ctx, s, tol, max_iter)

    arcs = {}
    arc_stats = []
    for ang in list(arc_angles or []):
        actx = _ChainContext(s, epsilon, float(ang), j_lo, 0, m_nodes, n_sub, cp_floor)
        av, ai, au, _, aok = _solve_chain(actx, s, tol, max_iter)
        arcs[float(ang)] = actx.grid(av)
        arc_stats.append((ai, au[-1] if au else 0.0))
        ok = ok and aok

    fld = OmegaField(
        direction=float(d),
        epsilon=complex(epsilon),
        grid=ctx.grid(v),
        iterations=max([iters] + [a[0] for a in arc_stats]),
        final_update_norm=max(
            [updates[-1] if updates else 0.0] + [a[1] for a in arc_stats]
        ),
        n_sub=n_sub,
        anchor=ctx.anchor,
        step=step,
        j_lo=j_lo,
        arcs=arcs,
    )

    w = solution_weight(s)
    p = s.qcalc
    norm = fld.norm(s)
    rate = max(ratios) if ratios else 0.0
    base_norm = qexp_norm(ctx.grid(ctx.base), w, p)
    ball = base_norm / (1.0 - rate) if rate < 1.0 else math.inf

    residual = equation_residual_e3(s, fld) if check_residual else math.nan

    gap = math.nan
    if check_uniqueness:
        v2, *_ = _solve_chain(ctx, s, tol, max_iter, start=2.0 * ctx.base)
        gap = qexp_norm(ctx.grid(v2 - v), w, p)
        if gap > 10.0 * tol * max(1.0, norm):
            raise AccuracyError(
                f"two starting fields disagree by {gap:.3e} after convergence "
                "(over 10x tol); the fixed point is not pinned down"
            )

    holo = math.nan
    if probe_holomorphy:
        holo = _holomorphy_probe(s, ctx, tol, max_iter)

    rep = SolveReport(
        contraction_estimates=ratios,
        residual=residual,
        norm=norm,
        ball_radius=ball,
        iterations=fld.iterations,
        converged=ok,
        update_norms=updates,
        uniqueness_gap=gap,
        holomorphy_defect=holo,
    )
    return fld, rep


def _holomorphy_probe(s, ctx, tol, max_iter):
    """Cauchy-Riemann defect of eps -> omega via central differences.

    Four extra solves at eps +- h and eps +- ih; the defect is the
    weighted norm of the difference of the two directional derivatives,
    relative to the derivative itself, and vanishes for a holomorphic
    dependence.
    """
    epsilon = ctx.epsilon
    h = 1e-4 * abs(epsilon)
    vals = {}
    for off in (h, -h, 1j * h, -1j * h):
        c2 = _ChainContext(
            s, epsilon + off, ctx.angle, ctx.j_lo, ctx.j_hi, ctx.m_nodes, ctx.n_sub
        )
        vals[off], *_ = _solve_chain(c2, s, tol, max_iter)
    dx = (vals[h] - vals[-h]) / (2 * h)
    dy = (vals[1j * h] - vals[-1j * h]) / (2j * h)
    w = solution_weight(s)
    denom = qexp_norm(ctx.grid(dx), w, s.qcalc)
    if denom == 0.0:
        return 0.0
    return qexp_norm(ctx.grid(dx - dy), w, s.qcalc) / denom


def apply_H(s: ProblemSpec, epsilon: complex, omega: OmegaField) -> OmegaField:
    """One application of the fixed-point map to a whole field."""
    ctx = _ChainContext(
        s,
        epsilon,
        omega.direction,
        omega.j_lo,
        omega.j_lo + omega.grid.tau_nodes.size - 1,
        omega.grid.m_nodes,
        omega.n_sub,
    )
    new_grid = ctx.grid(ctx.apply(omega.grid.values))
    new_arcs = {}
    for ang, g in omega.arcs.items():
        actx = _ChainContext(
            s,
            epsilon,
            ang,
            omega.j_lo,
            omega.j_lo + g.tau_nodes.size - 1,
            g.m_nodes,
            omega.n_sub,
        )
        new_arcs[ang] = actx.grid(actx.apply(g.values))
    return replace(
        omega, grid=new_grid, arcs=new_arcs, iterations=omega.iterations + 1
    )


# ------------------------------------------------------------------ residual

def _barycentric_rows(log_r, values, queries, stencil=12):
    """Interpolate chain rows (log-radius nodes) at query log-radii.

    Barycentric Lagrange on the `stencil` nearest nodes; exact when a
    query coincides with a node.
    """
    n = log_r.size
    out = np.empty((queries.size, values.shape[1]), complex)
    for i, x in enumerate(queries):
        j = int(np.searchsorted(log_r, x))
        lo = max(0, min(j - stencil // 2, n - stencil))
        xs = log_r[lo : lo + stencil]
        d = x - xs
        hit = int(np.argmin(np.abs(d)))
        if abs(d[hit]) < 1e-13:
            out[i] = values[lo + hit]
            continue
        wgt = np.empty(stencil)
        for a in range(stencil):
            wgt[a] = 1.0 / np.prod(xs[a] - np.delete(xs, a))
        coef = wgt / d
        out[i] = (coef[:, None] * values[lo : lo + stencil]).sum(0) / coef.sum()
    return out


def equation_residual_e3(s: ProblemSpec, omega: OmegaField, refine: int = 2) -> float:
    """Relative defect of the convolution equation on a denser lattice.

    Solved values are interpolated log-radially onto a lattice `refine`
    times denser, where the dilations are still exact index shifts; the
    defect is the weighted norm of P_m w - psi - (convolution side)
    relative to the weighted norm of P_m w.
    """
    g = omega.grid
    log_r = np.log(np.abs(g.tau_nodes))
    step_f = omega.step / refine
    n_fine = (g.tau_nodes.size - 1) * refine + 1
    lr_f = log_r[0] + step_f * np.arange(n_fine)
    vals_f = _barycentric_rows(log_r, g.values, lr_f)
    tau_f = np.exp(lr_f) * cmath.exp(1j * omega.direction)
    m = g.m_nodes
    h = g.m_step
    pm = pm_eval(s, tau_f[:, None], m[None, :])
    lhs = pm * vals_f
    resid = lhs - s.psi_eval(tau_f, m, omega.epsilon)
    nm = m.size
    lo = (nm - 1) // 2
    fft_len = 1
    while fft_len < 2 * nm - 1:
        fft_len *= 2
    for t in s.perturbation_terms():
        shift = _chain_shift(t.dilation, omega.n_sub * refine, s.k1)
        tau_below = np.exp(lr_f[0] + step_f * np.arange(shift, 0)) * cmath.exp(
            1j * omega.direction
        )
        fb = s.psi_eval(tau_below, m, omega.epsilon) / pm_eval(
            s, tau_below[:, None], m[None, :]
        )
        shifted = np.vstack([fb, vals_f[:shift, :]])
        rows = poly_eval(np.asarray(t.r_coeff, complex), 1j * m)[None, :] * shifted
        conv = np.fft.ifft(
            np.fft.fft(rows, fft_len, axis=1)
            * np.fft.fft(t.c_profile(m, omega.epsilon), fft_len),
            axis=1,
        )[:, lo : lo + nm] * (h / math.sqrt(_TWO_PI))
        tp = complex_power(
            cmath.exp(1j * omega.direction), t.tau_power
        ) * np.exp(lr_f) ** float(t.tau_power)
        resid = resid - t.coefficient(omega.epsilon) * tp[:, None] * conv
    w = solution_weight(s)
    num = qexp_norm(GridFunction2D(tau_f, m, resid), w, s.qcalc)
    den = qexp_norm(GridFunction2D(tau_f, m, lhs), w, s.qcalc)
    return num / den if den > 0 else num


# ------------------------------------------------------------------ assembly

@dataclass
class AssembledValues:
    """Per-m values of a ray assembly, kept in log form.

    value(m_i) = exp(log_mag[i] + i phase[i]); magnitudes may sit far
    outside float range, so convert with .values() only when moderate.
    """

    m_nodes: np.ndarray
    log_mag: np.ndarray
    phase: np.ndarray
    err_rel: float
    tail_drop: float

    def values(self) -> np.ndarray:
        mag = np.where(
            self.log_mag < -745.0, -np.inf, np.minimum(self.log_mag, 709.0)
        )
        return np.exp(mag) * np.exp(1j * self.phase)


def _kernel_integral(
    s: ProblemSpec,
    chain: GridFunction2D,
    T1: complex,
    T2: complex,
    *,
    p: QCalcParams,
    j_min_radius: float = 0.0,
    u_power: Fraction = Fraction(0),
    shift_expo: Fraction = Fraction(0),
    exp_scale: float = 1.0,
    prefactor: complex = 1.0,
    values: np.ndarray = None,
    n_sub: int = None,
    step: float = None,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
    tail_min: float = 35.0,
    check_radius: bool = True,
    fallback: np.ndarray = None,
) -> AssembledValues:
    """Log-domain trapezoid of w(q^a u) u^pow e^{-(1/T2)^{k2} c u} / Theta(u/T1) du/u.

    The chain supplies the ray nodes u_j = r_j e^{i angle} and the field
    rows; shift_expo dilates the field argument by an exact index shift,
    exp_scale multiplies u inside the exponential, u_power inserts a
    power of u whose phase follows the ray.  Restricting to radii at or
    above j_min_radius yields the truncated rays of the cocycle split.
    """
    tau = chain.tau_nodes
    vals = chain.values if values is None else np.asarray(values, complex)
    m = chain.m_nodes
    radii = np.abs(tau)
    if step is None:
        step = float(np.log(radii[1] / radii[0]))
    keep = radii >= j_min_radius * (1.0 - 1e-12)
    if not np.any(keep):
        raise GridError("no chain nodes at or beyond the requested radius")
    tau = tau[keep]
    radii = radii[keep]
    vals = vals[keep.nonzero()[0], :]
    angle = float(np.angle(tau[-1]))
    n = tau.size

    # admissibility of the kernel along this ray
    lim = 0.5 * p.q_pow(
        (Fraction(1, 2) - Fraction(s.alpha).limit_denominator(10**6)) / p.k
    )
    if check_radius and abs(T1) > lim:
        raise DomainError(
            f"|T1| = {abs(T1):.4g} exceeds the kernel radius bound {lim:.4g} "
            "(first time window)"
        )
    x = tau / T1
    window = min(0.9, max(2.0 * dtilde, 0.1))
    margin = float(np.min(theta_admissibility(p, x, window)))
    if margin <= dtilde:
        raise DomainError(
            f"theta-kernel margin {margin:.3e} is at or below {dtilde} along "
            "the ray (first time window)"
        )
    w2 = complex_power(1.0 / T2, Fraction(s.k2)) * exp_scale
    cosive = math.cos(angle + cmath.phase(complex(w2)))
    if cosive <= delta3_min:
        raise DomainError(
            f"cos(angle + arg (1/T2)^k2) = {cosive:.3f} is at or below "
            f"{delta3_min} (second time window)"
        )

    # field-argument dilation as an exact index shift
    if shift_expo != 0:
        if n_sub is None:
            raise GridError("a shifted assembly needs the lattice density n_sub")
        sft = _chain_shift(Fraction(shift_expo), n_sub, s.k1)
        if sft > 0:
            raise GridError("assembly shifts must move inward")
        if sft < 0:
            if fallback is None:
                below = radii[:-sft] * math.exp(step * sft) * cmath.exp(1j * angle)
                fb = s.psi_eval(below, m, 0.0) / pm_eval(
                    s, below[:, None], m[None, :]
                )
            else:
                fb = fallback
            vals = np.vstack([fb, vals[:sft, :]])

    # log integrand: log w + pow log u - (1/T2)^{k2} c u - log Theta(u/T1)
    tmag, tph = theta_q_log(p, x)
    expo_lin = -w2 * tau
    logmag_v = np.where(np.abs(vals) > 0, np.log(np.abs(vals) + 1e-300), -1e9)
    phase_v = np.angle(vals)
    upow = float(u_power)
    lterm = (
        logmag_v
        + (expo_lin.real - tmag + upow * np.log(radii))[:, None]
        + 1j * (phase_v + (expo_lin.imag - tph + upow * angle)[:, None])
    )
    wts = np.full(n, step)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    lmag, ph = logsum_complex(lterm + np.log(wts)[:, None], axis=0)

    # every-other-node resum gives the quadrature self error
    idx = np.arange(0, n, 2)
    w2s = np.full(idx.size, 2.0 * step)
    w2s[0] = step
    w2s[-1] = step if (n % 2) else 2.0 * step
    lmag2, ph2 = logsum_complex(lterm[idx] + np.log(w2s)[:, None], axis=0)
    with np.errstate(over="ignore", invalid="ignore"):
        rel = np.abs(
            1.0 - np.exp(np.minimum(lmag2 - lmag, 700.0) + 1j * (ph2 - ph))
        )
    err = float(np.nanmax(rel))

    # the integrand must die off toward the chain ends it is cut at
    colmax = lterm.real.max(axis=0)
    drop_far = float(np.min(colmax - lterm.real[-1]))
    drop_near = float(np.min(colmax - lterm.real[0]))
    drop = drop_far if j_min_radius > 0 else min(drop_far, drop_near)
    if drop < tail_min:
        raise AccuracyError(
            f"kernel integrand falls only {drop:.1f} logs at a chain end; "
            "extend the radial window"
        )

    pf = complex(prefactor)
    if pf == 0:
        return AssembledValues(m, lmag - 1e9, ph, err, drop)
    return AssembledValues(
        m, lmag + math.log(abs(pf)), ph + cmath.phase(pf), err, drop
    )


def assemble_U(
    omega: OmegaField,
    gamma: float,
    T1: complex,
    T2: complex,
    p: QCalcParams = None,
    *,
    s: ProblemSpec = None,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
    values: np.ndarray = None,
    tail_min: float = 35.0,
) -> AssembledValues:
    """Kernel integral of the solved field along one ray, per m node."""
    if s is None:
        raise DomainError("assemble_U needs the problem instance (s=...)")
    p = s.qcalc if p is None else p
    chain = omega.chain_grid(gamma)
    return _kernel_integral(
        s,
        chain,
        T1,
        T2,
        p=p,
        values=values,
        n_sub=omega.n_sub,
        step=omega.step,
        dtilde=dtilde,
        delta3_min=delta3_min,
        tail_min=tail_min,
        prefactor=1.0 / pi_q_k(p),
    )


def log_fourier_integral(
    av: AssembledValues, z: complex, *, beta: float, beta_prime: float
) -> tuple[float, float]:
    """Inverse Fourier integral of log-form values, as (log_mag, phase).

    The integrand is factored around its peak magnitude, so the result
    survives even when every sample underflows float range.
    """
    if not 0.0 <= beta_prime < beta:
        raise DomainError(f"need 0 <= beta_prime < beta, got {beta_prime}, {beta}")
    z = complex(z)
    if abs(z.imag) > beta_prime + 1e-15:
        raise DomainError(
            f"|Im z| = {abs(z.imag):.4g} exceeds the strip bound {beta_prime}"
        )
    m = av.m_nodes
    lt = av.log_mag + 1j * av.phase + 1j * z * m
    peak = float(np.max(lt.real))
    if not math.isfinite(peak):
        return -math.inf, 0.0
    g = np.exp(lt - peak)
    edge = max(abs(g[0]), abs(g[-1]))
    if edge > 1e-6:
        raise AccuracyError(
            f"Fourier integrand has not decayed at the m-grid edge "
            f"(relative size {edge:.2e})"
        )
    val = complex(np.trapezoid(g, m)) / math.sqrt(_TWO_PI)
    if val == 0:
        return -math.inf, 0.0
    return peak + math.log(abs(val)), cmath.phase(val)


def assemble_u(
    s: ProblemSpec,
    omega: OmegaField,
    t1: complex,
    t2: complex,
    z: complex,
    epsilon: complex,
    *,
    beta_prime: float = None,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
    forcing: bool = False,
    tail_min: float = 35.0,
) -> complex:
    """Analytic solution value u(t1, t2, z) from the solved field.

    Composes the ray assembly at (eps^{lambda1} t1, eps^{lambda2} t2)
    with the inverse Fourier integral in m.  With forcing=True the same
    kernel acts on the forcing samples instead, which realizes the
    inhomogeneity without a second transform layer.
    """
    beta_prime = 0.5 * s.beta if beta_prime is None else beta_prime
    T1 = epsilon_power(epsilon, Fraction(s.lambda1)) * t1
    T2 = epsilon_power(epsilon, Fraction(s.lambda2)) * t2
    vals = None
    if forcing:
        chain = omega.chain_grid(omega.direction)
        vals = s.psi_eval(chain.tau_nodes, chain.m_nodes, epsilon)
    av = assemble_U(
        omega,
        omega.direction,
        T1,
        T2,
        s=s,
        dtilde=dtilde,
        delta3_min=delta3_min,
        values=vals,
        tail_min=tail_min,
    )
    lm, ph = log_fourier_integral(av, z, beta=s.beta, beta_prime=beta_prime)
    if lm > 700.0:
        raise AccuracyError("assembled value overflows float range")
    return cmath.exp(lm + 1j * ph) if lm > -745.0 else 0.0


# ------------------------------------------------------------------ identities

def _fd_t2_derivative(f, T2: complex, k2: int, order: int, rel_step: float = 1e-3):
    """(T2^{k2+1} d/dT2)^order f by nested 4th-order central differences.

    Each level pairs steps h and h/2 in a Richardson combination along
    the T2 direction; f maps T2 to a per-m complex vector.
    """
    if order == 0:
        return f(T2)

    def euler_once(g, T):
        h1 = rel_step * T
        if abs(h1) == 0:
            raise AccuracyError("finite-difference step underflow at T2 = 0")

        def central(h):
            return (-g(T + 2 * h) + 8 * g(T + h) - 8 * g(T - h) + g(T - 2 * h)) / (
                12 * h
            )

        return T ** (k2 + 1) * (16 * central(h1 / 2) - central(h1)) / 15.0

    return euler_once(
        lambda x: _fd_t2_derivative(f, x, k2, order - 1, rel_step), T2
    )


def operator_identity_check(
    omega: OmegaField,
    which: str,
    s: ProblemSpec,
    sample_points: list,
    *,
    delta: Fraction = None,
    d_pow: Fraction = None,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
) -> float:
    """Max relative discrepancy of one commutation identity at samples.

    The identities tie T-plane operations on the assembled transform to
    modified kernels on the Borel side: (i) powers of the second Euler
    operator against a (k2 u)^pow weight; (ii) a first-time power
    dilation against a shifted field with a dilated exponential; (iii)
    the main-term case, where the shift in the exponential cancels; (iv)
    the mixed case, where an extra second-time dilation restores the
    plain exponential.  Left sides use exact dilations and nested finite
    differences only, so the two sides share nothing but the solved
    field.
    """
    q = s.q
    d_pow = s.d_main if d_pow is None else Fraction(d_pow)
    if delta is None and which in ("i", "ii"):
        delta = Fraction(1)
    gamma = omega.direction
    pref = 1.0 / q ** float((d_pow * (d_pow - 1) / 2) / s.k1)

    worst = 0.0
    for (T1, T2) in sample_points:
        if which == "i":
            n_ord = int(delta)
            lhs = _fd_t2_derivative(
                lambda t2: assemble_U(
                    omega, gamma, T1, t2, s=s, dtilde=dtilde,
                    delta3_min=delta3_min,
                ).values(),
                T2,
                s.k2,
                n_ord,
            )
            rhs = _kernel_integral(
                s, omega.grid, T1, T2, p=s.qcalc,
                u_power=Fraction(n_ord),
                prefactor=float(s.k2) ** n_ord / pi_q_k(s.qcalc),
                n_sub=omega.n_sub, step=omega.step,
                dtilde=dtilde, delta3_min=delta3_min,
            ).values()
        elif which == "ii":
            a = delta - Fraction(d_pow, 1) / s.k1
            lhs = complex_power(T1, d_pow) * assemble_U(
                omega, gamma, q ** float(delta) * T1, T2, s=s,
                dtilde=dtilde, delta3_min=delta3_min,
            ).values()
            rhs = _ray_weighted(
                omega, s, T1, T2, d_pow, a, q ** float(a), pref,
                dtilde, delta3_min,
            )
        elif which == "iii":
            dil = Fraction(d_pow, 1) / s.k1
            lhs = complex_power(T1, d_pow) * assemble_U(
                omega, gamma, q ** float(dil) * T1, T2, s=s,
                dtilde=dtilde, delta3_min=delta3_min,
            ).values()
            rhs = _ray_weighted(
                omega, s, T1, T2, d_pow, Fraction(0), 1.0, pref,
                dtilde, delta3_min,
            )
        elif which == "iv":
            if delta is None:
                raise DomainError("identity (iv) needs the dilation order delta")
            a = delta - Fraction(d_pow, 1) / s.k1
            lhs = complex_power(T1, d_pow) * assemble_U(
                omega, gamma, q ** float(delta) * T1,
                q ** float(a / s.k2) * T2, s=s,
                dtilde=dtilde, delta3_min=delta3_min,
            ).values()
            rhs = _ray_weighted(
                omega, s, T1, T2, d_pow, a, 1.0, pref, dtilde, delta3_min
            )
        else:
            raise DomainError(f"unknown identity {which!r}")
        scale = float(np.max(np.abs(lhs)) + np.max(np.abs(rhs)))
        if scale == 0:
            continue
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) * 2.0 / scale))
    return worst


def _ray_weighted(omega, s, T1, T2, d_pow, shift_expo, exp_scale, pref,
                  dtilde, delta3_min):
    return _kernel_integral(
        s, omega.grid, T1, T2, p=s.qcalc,
        u_power=d_pow, shift_expo=shift_expo, exp_scale=exp_scale,
        prefactor=pref / pi_q_k(s.qcalc),
        n_sub=omega.n_sub, step=omega.step,
        dtilde=dtilde, delta3_min=delta3_min,
    ).values()


# ------------------------------------------------------------------ residuals

def equation_residual_e2(
    s: ProblemSpec,
    omega: OmegaField,
    T1: complex,
    T2: complex,
    *,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
) -> float:
    """Relative defect of the transformed equation at one (T1, T2).

    Every operator acts on the assembled transform directly: exact
    q-dilations of the two time variables, nested central differences
    for the Euler operator, and a trapezoid m-convolution against the
    coefficient samples.  Nothing is shared with the solver's own
    right-hand side beyond the field itself.
    """
    m = omega.grid.m_nodes
    im = 1j * m
    q = s.q

    def U(t1v, t2v):
        return assemble_U(
            omega, omega.direction, t1v, t2v, s=s, dtilde=dtilde,
            delta3_min=delta3_min,
        ).values()

    qu = poly_eval(s.Q, im) * U(T1, T2)

    dil_main = q ** float(Fraction(s.d_main, 1) / s.k1)
    g_main = _fd_t2_derivative(
        lambda t2: poly_eval(s.R_main, im) * U(dil_main * T1, t2),
        T2,
        s.k2,
        s.delta_tilde_main,
    )
    main = complex_power(T1, s.d_main) * g_main

    h = float(m[1] - m[0])
    pert = np.zeros_like(qu)
    for t in s.perturbation_terms():
        d_l = s.d[t.l1 - 1]
        dl_l = s.delta[t.l1 - 1]
        dt_l = s.delta_tilde[t.l2 - 1]
        T1d = q ** float(dl_l) * T1
        T2d = q ** float(t.dilation / s.k2) * T2
        r_im = poly_eval(np.asarray(t.r_coeff, complex), im)
        c_samp = t.c_profile(m, omega.epsilon)
        g = _fd_t2_derivative(
            lambda t2: _conv_vec(c_samp, r_im * U(T1d, t2), h),
            T2d,
            s.k2,
            dt_l,
        )
        pert = pert + (
            epsilon_power(omega.epsilon, t.eps_expo)
            * complex_power(T1, d_l)
            * g
        )

    fvals = s.psi_eval(omega.grid.tau_nodes, m, omega.epsilon)
    forcing = assemble_U(
        omega, omega.direction, T1, T2, s=s, values=fvals,
        dtilde=dtilde, delta3_min=delta3_min,
    ).values()

    resid = qu - main - pert - forcing
    scale = float(np.max(np.abs(qu)) + np.max(np.abs(forcing)))
    return float(np.max(np.abs(resid)) / scale) if scale > 0 else 0.0


def _conv_vec(c, g, h):
    n = np.size(c)
    k = (n - 1) // 2
    return np.convolve(c, g)[k : k + n] * h / math.sqrt(_TWO_PI)


def equation_residual_e1(
    s: ProblemSpec,
    omega: OmegaField,
    t1: complex,
    t2: complex,
    z: complex,
    epsilon: complex,
    *,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
) -> float:
    """Relative defect of the original equation at one (t1, t2, z).

    Symbol polynomials act spectrally on the m-grid before the inverse
    Fourier step; the variable coefficient is carried to z-space and
    multiplies there, which replaces the solver's m-convolution by an
    independent route; time operators act by exact dilations and nested
    finite differences on the physical variables.
    """
    m = omega.grid.m_nodes
    im = 1j * m
    q = s.q
    e_l1 = epsilon_power(epsilon, Fraction(s.lambda1))
    e_l2 = epsilon_power(epsilon, Fraction(s.lambda2))

    def U(t1v, t2v):
        return assemble_U(
            omega, omega.direction, e_l1 * t1v, e_l2 * t2v, s=s,
            dtilde=dtilde, delta3_min=delta3_min,
        ).values()

    def to_z(vec):
        lt = (
            np.where(np.abs(vec) > 0, np.log(np.abs(vec) + 1e-300), -1e9)
            + 1j * np.angle(vec)
            + 1j * z * m
        )
        peak = float(np.max(lt.real))
        g = np.exp(lt - peak)
        return math.exp(peak) * complex(np.trapezoid(g, m)) / math.sqrt(_TWO_PI)

    qu_z = to_z(poly_eval(s.Q, im) * U(t1, t2))

    dil_main = q ** float(Fraction(s.d_main, 1) / s.k1)
    g_main = _fd_t2_derivative(
        lambda tt2: poly_eval(s.R_main, im) * U(dil_main * t1, tt2),
        t2,
        s.k2,
        s.delta_tilde_main,
    )
    main_z = (
        epsilon_power(epsilon, s.Delta_main)
        * complex_power(t1, s.d_main)
        * to_z(g_main)
    )

    pert_z = 0.0
    for t in s.perturbation_terms():
        d_l = s.d[t.l1 - 1]
        dl_l = s.delta[t.l1 - 1]
        dt_l = s.delta_tilde[t.l2 - 1]
        t1d = q ** float(dl_l) * t1
        t2d = q ** float(t.dilation / s.k2) * t2
        r_im = poly_eval(np.asarray(t.r_coeff, complex), im)
        g = _fd_t2_derivative(lambda tt2: r_im * U(t1d, tt2), t2d, s.k2, dt_l)
        c_z = to_z(t.c_profile(m, epsilon))
        pert_z = pert_z + (
            epsilon_power(epsilon, s.Delta[t.l1 - 1][t.l2 - 1])
            * complex_power(t1, d_l)
            * c_z
            * to_z(g)
        )

    fvals = s.psi_eval(omega.grid.tau_nodes, m, epsilon)
    f_z = to_z(
        assemble_U(
            omega, omega.direction, e_l1 * t1, e_l2 * t2, s=s, values=fvals,
            dtilde=dtilde, delta3_min=delta3_min,
        ).values()
    )

    resid = qu_z - main_z - pert_z - f_z
    scale = abs(qu_z) + abs(f_z)
    return abs(resid) / scale if scale > 0 else 0.0


# ------------------------------------------------------------------ cocycles

@dataclass
class DifferenceReport:
    """Direct and path-split values of one consecutive-sector cocycle.

    j1, j2, j3 are (log magnitude, phase) pairs for the outgoing ray at
    the higher direction, the outgoing ray at the lower direction, and
    the arc at radius rho/2; the split total is j1 - j2 + j3.
    """

    direct: complex
    via_paths: complex
    j1: tuple
    j2: tuple
    j3: tuple
    rel_gap: float
    log_mag_total: float
    phase_total: float


def deformation_arc_angles(cov: SectorCovering, h: int, n_arc: int = 12):
    """Gauss-Legendre angles and weights between directions h and h+1."""
    ga = float(cov.directions[h])
    gap = (float(cov.directions[(h + 1) % cov.iota]) - ga) % _TWO_PI
    xs, ws = np.polynomial.legendre.leggauss(n_arc)
    angles = ga + 0.5 * gap * (xs + 1.0)
    weights = 0.5 * gap * ws
    return angles, weights


def _logsum_pairs(pairs):
    """Signed sum of numbers given as (log_mag, phase, sign) triples."""
    finite = [(lm, ph, sg) for (lm, ph, sg) in pairs if lm > -math.inf]
    if not finite:
        return -math.inf, 0.0
    peak = max(lm for lm, _, _ in finite)
    tot = sum(sg * cmath.exp(lm - peak + 1j * ph) for lm, ph, sg in finite)
    if tot == 0:
        return -math.inf, 0.0
    return peak + math.log(abs(tot)), cmath.phase(tot)


def solution_difference(
    s: ProblemSpec,
    cov: SectorCovering,
    h: int,
    t1: complex,
    t2: complex,
    z: complex,
    epsilon: complex,
    *,
    fields: tuple = None,
    tol: float = 1e-12,
    n_arc: int = 12,
    beta_prime: float = None,
    dtilde: float = 0.05,
    delta3_min: float = 0.05,
    n_sub: int = None,
    r_min_factor: float = 1e-8,
    tail_min: float = 35.0,
) -> DifferenceReport:
    """Difference of consecutive sector solutions and its path split.

    Solves (or reuses) the fields for directions h and h+1, forms the
    direct difference of the two assembled solutions, and the split:
    truncated rays from rho/2 outward for each direction plus the arc at
    rho/2 between them, integrated at Gauss-Legendre nodes whose field
    values come from the disc chains of the lower-direction solve.  The
    split needs the theta-pole ray and the characteristic roots out of
    the swept region, which is checked up front.
    """
    beta_prime = 0.5 * s.beta if beta_prime is None else beta_prime
    ga = float(cov.directions[h])
    gap = (float(cov.directions[(h + 1) % cov.iota]) - ga) % _TWO_PI
    degenerate = gap < 1e-12
    gb = ga + gap
    T1 = epsilon_power(epsilon, Fraction(s.lambda1)) * t1
    T2 = epsilon_power(epsilon, Fraction(s.lambda2)) * t2

    pole_ray = math.pi + cmath.phase(T1)
    k = math.floor((gb - pole_ray) / _TWO_PI)
    if not degenerate and ga <= pole_ray + k * _TWO_PI <= gb:
        raise GeometryError(
            f"theta pole ray (arg -T1 = {pole_ray % _TWO_PI:.3f}) crosses the "
            f"deformation sector [{ga:.3f}, {gb:.3f}]"
        )
    for mm in np.linspace(-s.m_max, s.m_max, 17):
        roots = pm_roots(s, float(mm))
        if float(np.min(np.abs(roots))) <= s.rho / 2.0:
            raise GeometryError(
                f"characteristic root inside the deformation disc at m = {mm:.3g}"
            )

    arc_angles, arc_w = deformation_arc_angles(cov, h, n_arc)
    probe = float(arc_angles[n_arc // 2])

    if fields is None:
        fa, _ = solve_omega(
            s, ga, epsilon, tol, n_sub=n_sub, r_min_factor=r_min_factor,
            arc_angles=arc_angles, check_residual=False,
        )
        fb, _ = solve_omega(
            s, gb, epsilon, tol, n_sub=n_sub, r_min_factor=r_min_factor,
            arc_angles=[probe], check_residual=False,
        )
    else:
        fa, fb = fields

    # the two directional solves must share the analytic element on the
    # disc; compare them on a common arc chain when both carry one
    try:
        g1 = fa.chain_grid(probe)
        g2 = fb.chain_grid(probe)
    except GridError:
        g1 = g2 = None
    if g1 is not None and g1.values.shape == g2.values.shape:
        gdiff = qexp_norm(
            GridFunction2D(g1.tau_nodes, g1.m_nodes, g1.values - g2.values),
            solution_weight(s),
            s.qcalc,
        )
        if gdiff > 10.0 * tol * max(1.0, fa.norm(s)):
            raise AccuracyError(
                f"directional solves disagree on the disc by {gdiff:.3e} "
                "(over 10x tol); no common analytic element"
            )

    ua = assemble_u(s, fa, t1, t2, z, epsilon, beta_prime=beta_prime,
                    dtilde=dtilde, delta3_min=delta3_min, tail_min=tail_min)
    ub = assemble_u(s, fb, t1, t2, z, epsilon, beta_prime=beta_prime,
                    dtilde=dtilde, delta3_min=delta3_min, tail_min=tail_min)
    direct = ub - ua

    piq = pi_q_k(s.qcalc)

    def ray_piece(fld):
        av = _kernel_integral(
            s, fld.grid, T1, T2, p=s.qcalc,
            j_min_radius=s.rho / 2.0, prefactor=1.0 / piq,
            n_sub=fld.n_sub, step=fld.step,
            dtilde=dtilde, delta3_min=delta3_min, tail_min=tail_min,
        )
        return log_fourier_integral(av, z, beta=s.beta, beta_prime=beta_prime)

    j1 = ray_piece(fb)
    j2 = ray_piece(fa)

    if degenerate:
        j3 = (-math.inf, 0.0)
    else:
        p = s.qcalc
        w2 = complex_power(1.0 / T2, Fraction(s.k2))
        rows = []
        for ang, wgt in zip(arc_angles, arc_w):
            g = fa.chain_grid(float(ang))
            u = g.tau_nodes[-1]
            if abs(abs(u) - s.rho / 2.0) > 1e-9 * s.rho:
                raise GridError("arc chain does not end at radius rho/2")
            row = g.values[-1, :]
            tm, tp = theta_q_log(p, u / T1)
            lt = (
                np.where(np.abs(row) > 0, np.log(np.abs(row) + 1e-300), -1e9)
                + 1j * np.angle(row)
                + (-w2 * u)
                - (tm + 1j * tp)
                + math.log(abs(wgt))
                + 1j * (math.pi / 2.0)
            )
            rows.append(lt)
        lmag, ph = logsum_complex(np.stack(rows, axis=0), axis=0)
        j3 = log_fourier_integral(
            AssembledValues(
                fa.grid.m_nodes, lmag - math.log(piq), ph, 0.0, math.inf
            ),
            z,
            beta=s.beta,
            beta_prime=beta_prime,
        )

    lm_tot, ph_tot = _logsum_pairs(
        [(j1[0], j1[1], 1.0), (j2[0], j2[1], -1.0), (j3[0], j3[1], 1.0)]
    )
    if lm_tot > 700.0:
        raise AccuracyError("path-split total overflows float range")
    via = cmath.exp(lm_tot + 1j * ph_tot) if lm_tot > -745.0 else 0.0
    scale = max(abs(direct), abs(via), 1e-300)
    rel_gap = abs(direct - via) / scale
    return DifferenceReport(
        direct=direct,
        via_paths=via,
        j1=j1,
        j2=j2,
        j3=j3,
        rel_gap=rel_gap,
        log_mag_total=lm_tot,
        phase_total=ph_tot,
    )


# ------------------------------------------------------------------ export

def export_omega_csv(omega: OmegaField, path: str) -> None:
    """Write a solved field to structured text, one node per row."""
    with open(path, "w") as fh:
        fh.write(f"# direction,{omega.direction!r}\n")
        fh.write(f"# epsilon,{omega.epsilon.real!r},{omega.epsilon.imag!r}\n")
        fh.write(
            f"# n_sub,{omega.n_sub}\n# anchor,{omega.anchor!r}\n"
            f"# step,{omega.step!r}\n# j_lo,{omega.j_lo}\n"
            f"# iterations,{omega.iterations}\n"
            f"# final_update_norm,{omega.final_update_norm!r}\n"
        )
        fh.write("chain,j,radius,m,re,im\n")
        chains = [("main", omega.grid)] + [
            (f"arc{i}", g) for i, g in enumerate(omega.arcs.values())
        ]
        for name, g in chains:
            radii = np.abs(g.tau_nodes)
            for i in range(radii.size):
                j = omega.j_lo + i
                for kk, mval in enumerate(g.m_nodes):
                    v = g.values[i, kk]
                    fh.write(
                        f"{name},{j},{radii[i]!r},{mval!r},{v.real!r},{v.imag!r}\n"
                    )
