"""Problem instances: parameters, validation, characteristic geometry.

A :class:`ProblemSpec` collects everything that defines one concrete
equation: the base q, the two dilation orders, the grid of exponents
(Delta, d, delta, delta_tilde), the symbol polynomials Q and R, the
weight parameters, and declarative profiles for the perturbation
coefficients and the forcing.

The characteristic polynomial in the Borel variable,

    P_m(tau) = Q(im) - c_main * tau^{d+dt} * R_main(im),

has d+dt roots of common modulus per m; every admissible radial
direction must keep a relative distance to all of them, which is what
``sector_separation`` measures (the constants M1 and C_P).  Coverings of
the punctured epsilon-disc with per-sector directions are produced by
``build_good_covering`` and their time-sector compatibility constants
(delta1, delta2, delta3) by ``check_admissible``.

Exponents are kept as exact rationals so that dilations land on
geometric grids without drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import DomainError, GeometryError, ValidationError
from .qkernel import QCalcParams
from .spaces import poly_degree, poly_eval

__all__ = [
    "ProblemSpec",
    "Sector",
    "SectorCovering",
    "GeometryReport",
    "ValidationReport",
    "PerturbationTerm",
    "validate_spec",
    "pm_eval",
    "pm_roots",
    "sector_separation",
    "build_good_covering",
    "check_admissible",
    "epsilon_power",
    "reference_instance",
    "angle_dist",
]

_TWO_PI = 2.0 * math.pi


def _fr(x) -> Fraction:
    # exponents arrive as ints, Fractions, or "p/q" strings
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    f = Fraction(x).limit_denominator(10**9)
    if abs(float(f) - float(x)) > 1e-12 * max(1.0, abs(float(x))):
        raise ValidationError(f"exponent {x!r} is not a recognizable rational")
    return f


def _fr_str(f: Fraction) -> str:
    return str(f)


def epsilon_power(epsilon: complex, expo: Fraction) -> complex:
    """Principal-branch epsilon**expo for a rational exponent."""
    if epsilon == 0:
        if expo == 0:
            return 1.0 + 0j
        if expo > 0:
            return 0j
        raise DomainError("negative power of zero")
    return complex(np.exp(float(expo) * np.log(complex(epsilon))))


def angle_dist(a, b):
    """Distance between angles on the circle, in [0, pi]."""
    d = np.mod(np.asarray(a) - np.asarray(b) + math.pi, _TWO_PI) - math.pi
    return np.abs(d)


# ------------------------------------------------------------------ profiles

def _profile_m(kind: dict, mu: float, beta: float) -> Callable:
    """m-profile factory shared by coefficient and forcing descriptors."""
    scale = float(kind.get("scale", 1.0))
    typ = kind.get("type", "smooth_decay")
    if typ == "zero":
        return lambda m, eps: np.zeros(np.shape(m), complex)
    if typ == "smooth_decay":
        # smooth in m (no |m| kink), inside the (beta, mu) weight class
        def prof(m, eps):
            m = np.asarray(m, float)
            return scale * (1.0 + m**2) ** (-mu / 2.0) * np.exp(
                -beta * np.sqrt(1.0 + m**2)
            ) + 0j

        return prof
    raise ValidationError(f"unknown coefficient profile type {typ!r}")


def _forcing_factory(kind: dict, mu: float, beta: float) -> Callable:
    typ = kind.get("type", "linear_tau")
    scale = float(kind.get("scale", 1.0))
    base = _profile_m({"type": "smooth_decay", "scale": scale}, mu, beta)
    if typ == "zero":
        return lambda tau, m, eps: np.zeros(
            (np.size(tau), np.size(m)), complex
        )
    if typ == "linear_tau":
        # entire in tau, vanishing at 0 so the ray integral is regular
        def psi(tau, m, eps):
            tau = np.atleast_1d(np.asarray(tau, complex))
            return tau[:, None] * base(m, eps)[None, :]

        return psi
    raise ValidationError(f"unknown forcing profile type {typ!r}")


# ------------------------------------------------------------------ spec

@dataclass
class ProblemSpec:
    """Full parameter set of one equation instance.

    Exponent tables are indexed by the perturbation indices
    l1 in 1..D1-1 and l2 in 1..D2-1 (stored 0-based); the main-term
    exponents carry the _main suffix.
    """

    q: float
    k1: int
    k2: int
    k1p: int
    k1pp: float
    D1: int
    D2: int
    Delta: list          # [l1-1][l2-1] rational
    Delta_main: Fraction
    d: list              # [l1-1] rational
    d_main: Fraction
    delta: list          # [l1-1] rational
    delta_tilde: list    # [l2-1] nonneg integer
    delta_tilde_main: int
    lambda1: int
    lambda2: int
    mu2: int
    Q: list
    R: list              # [l1-1][l2-1] coefficient list
    R_main: list
    mu: float
    beta: float
    alpha: float
    delta_off: float
    rho: float
    epsilon0: float
    C_coeff: list        # [l1-1][l2-1] profile descriptor
    psi: dict            # forcing descriptor
    m_max: float = 16.0
    m_step: float = 0.125

    def __post_init__(self) -> None:
        self.Delta = [[_fr(x) for x in row] for row in self.Delta]
        self.Delta_main = _fr(self.Delta_main)
        self.d = [_fr(x) for x in self.d]
        self.d_main = _fr(self.d_main)
        self.delta = [_fr(x) for x in self.delta]
        self.delta_tilde = [int(x) for x in self.delta_tilde]
        self.delta_tilde_main = int(self.delta_tilde_main)

    # -- derived helpers ------------------------------------------------

    @property
    def qcalc(self) -> QCalcParams:
        return QCalcParams(q=self.q, k=Fraction(self.k1))

    @property
    def logq(self) -> float:
        return math.log(self.q)

    @property
    def root_count(self) -> int:
        total = self.d_main + self.delta_tilde_main
        if total.denominator != 1 or total <= 0:
            raise ValidationError(
                f"d_main + delta_tilde_main = {total} must be a positive integer"
            )
        return int(total)

    def m_grid(self) -> np.ndarray:
        n = int(round(2 * self.m_max / self.m_step)) + 1
        return np.linspace(-self.m_max, self.m_max, n)

    def main_coefficient(self) -> float:
        """Coefficient of tau^{d+dt} R_main(im) in P_m."""
        e = Fraction(self.d_main * (self.d_main - 1), 2) / self.k1
        return float(self.k2) ** self.delta_tilde_main / self.q ** float(e)

    def perturbation_terms(self) -> list["PerturbationTerm"]:
        out = []
        for i1 in range(self.D1 - 1):
            for i2 in range(self.D2 - 1):
                d, dl = self.d[i1], self.delta[i1]
                dt = self.delta_tilde[i2]
                a = dl - d / self.k1
                eps_expo = (
                    self.Delta[i1][i2]
                    - self.lambda1 * d
                    - self.lambda2 * self.k2 * Fraction(dt)
                )
                base = (
                    float(self.k2) ** dt
                    * self.q ** float(a * dt)
                    / self.q ** float(Fraction(d * (d - 1), 2) / self.k1)
                )
                out.append(
                    PerturbationTerm(
                        l1=i1 + 1,
                        l2=i2 + 1,
                        eps_expo=eps_expo,
                        scalar=base,
                        tau_power=Fraction(dt) + d,
                        dilation=a,
                        r_coeff=self.R[i1][i2],
                        c_profile=_profile_m(self.C_coeff[i1][i2], self.mu, self.beta),
                    )
                )
        return out

    def psi_eval(self, tau, m, epsilon) -> np.ndarray:
        return _forcing_factory(self.psi, self.mu, self.beta)(tau, m, epsilon)

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "q": self.q,
            "k1": self.k1,
            "k2": self.k2,
            "k1p": self.k1p,
            "k1pp": self.k1pp,
            "D1": self.D1,
            "D2": self.D2,
            "Delta": [[_fr_str(x) for x in row] for row in self.Delta],
            "Delta_main": _fr_str(self.Delta_main),
            "d": [_fr_str(x) for x in self.d],
            "d_main": _fr_str(self.d_main),
            "delta": [_fr_str(x) for x in self.delta],
            "delta_tilde": self.delta_tilde,
            "delta_tilde_main": self.delta_tilde_main,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "mu2": self.mu2,
            "Q": list(self.Q),
            "R": [[list(c) for c in row] for row in self.R],
            "R_main": list(self.R_main),
            "mu": self.mu,
            "beta": self.beta,
            "alpha": self.alpha,
            "delta_off": self.delta_off,
            "rho": self.rho,
            "epsilon0": self.epsilon0,
            "C_coeff": self.C_coeff,
            "psi": self.psi,
            "m_max": self.m_max,
            "m_step": self.m_step,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ProblemSpec":
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(f"bad problem document: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "ProblemSpec":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(
                    f"unparseable problem document {path}: line {exc.lineno}: {exc.msg}"
                ) from exc
        if not isinstance(doc, dict):
            raise ValidationError("problem document must be a JSON object")
        return cls.from_json_dict(doc)


@dataclass(frozen=True)
class PerturbationTerm:
    """One (l1, l2) term of the convolution equation, preprocessed."""

    l1: int
    l2: int
    eps_expo: Fraction   # power of epsilon in front
    scalar: float        # k2^dt q^{a dt} / q^{d(d-1)/(2 k1)}
    tau_power: Fraction  # dt + d
    dilation: Fraction   # a = delta - d/k1 (negative)
    r_coeff: list
    c_profile: Callable

    def coefficient(self, epsilon: complex) -> complex:
        return epsilon_power(epsilon, self.eps_expo) * self.scalar


# ------------------------------------------------------------------ reports

@dataclass
class ValidationReport:
    entries: list = field(default_factory=list)  # (name, ok, lhs, rhs, note)

    def add(self, name: str, ok: bool, lhs, rhs, note: str = "") -> None:
        self.entries.append((name, bool(ok), lhs, rhs, note))

    @property
    def ok(self) -> bool:
        return all(e[1] for e in self.entries)

    def failing(self) -> list:
        return [e for e in self.entries if not e[1]]

    def as_rows(self) -> list:
        return [
            {"check": n, "ok": ok, "lhs": repr(l), "rhs": repr(r), "note": t}
            for (n, ok, l, r, t) in self.entries
        ]


@dataclass
class GeometryReport:
    M1: float = math.nan
    C_P: float = math.nan
    delta1: float = math.nan
    delta2: float = math.nan
    delta3: float = math.nan
    admissible: bool = False
    diagnostics: list = field(default_factory=list)


@dataclass(frozen=True)
class Sector:
    """Annular sector {r e^{i a} : r_lo <= r <= r_hi, a in [lo, hi]}."""

    angle_lo: float
    angle_hi: float
    r_lo: float = 0.0
    r_hi: float = math.inf

    @property
    def center(self) -> float:
        return 0.5 * (self.angle_lo + self.angle_hi)

    @property
    def aperture(self) -> float:
        return self.angle_hi - self.angle_lo

    def sample_angles(self, n: int = 5) -> np.ndarray:
        return np.linspace(self.angle_lo, self.angle_hi, n)


@dataclass
class SectorCovering:
    iota: int
    sectors: list            # per h: Sector in the epsilon plane
    directions: list         # per h: ray angle gamma_h
    kind: str                # "inner" | "outer"
    margins: list            # per h: dict of the geometry margins at gamma_h
    t1: Sector = None
    t2: Sector = None
    theta_h: list = None     # inner only: per-sector rotation of t2
    chi2: dict = None        # inner only: bounded x2 annulus {r_lo, r_hi}
    rho2: float = math.nan   # outer only: t2 radius cap

    def overlap(self, h: int) -> Sector:
        """Intersection of sector h and h+1 (cyclic)."""
        a = self.sectors[h]
        b = self.sectors[(h + 1) % self.iota]
        lo, hi = b.angle_lo, a.angle_hi
        if h == self.iota - 1:
            lo += _TWO_PI * math.floor((hi - lo) / _TWO_PI)
            lo -= _TWO_PI if lo > hi else 0.0
        if lo >= hi:
            raise GeometryError(f"sectors {h} and {h + 1} do not overlap")
        return Sector(lo, hi, a.r_lo, min(a.r_hi, b.r_hi))


# ------------------------------------------------------------------ validate

def validate_spec(s: ProblemSpec) -> ValidationReport:
    """Report every structural constraint with both sides; never raises."""
    rep = ValidationReport()
    rep.add("q > 1", s.q > 1.0, s.q, 1.0)
    rep.add("k1 >= 1 integer", s.k1 >= 1, s.k1, 1)
    rep.add("k2 >= 1 integer", s.k2 >= 1, s.k2, 1)
    rep.add("k1p > k1", s.k1p > s.k1, s.k1p, s.k1)
    rep.add("k1pp in (0, k1)", 0.0 < s.k1pp < s.k1, s.k1pp, (0, s.k1))
    rep.add("D1 >= 2", s.D1 >= 2, s.D1, 2)
    rep.add("D2 >= 2", s.D2 >= 2, s.D2, 2)
    rep.add("mu > 1", s.mu > 1.0, s.mu, 1.0)
    rep.add("beta > 0", s.beta > 0, s.beta, 0.0)
    rep.add("delta_off > 1", s.delta_off > 1.0, s.delta_off, 1.0)
    rep.add("rho > 0", s.rho > 0, s.rho, 0.0)
    rep.add("epsilon0 > 0", s.epsilon0 > 0, s.epsilon0, 0.0)

    shapes_ok = (
        len(s.Delta) == s.D1 - 1
        and all(len(row) == s.D2 - 1 for row in s.Delta)
        and len(s.d) == s.D1 - 1
        and len(s.delta) == s.D1 - 1
        and len(s.delta_tilde) == s.D2 - 1
        and len(s.R) == s.D1 - 1
        and all(len(row) == s.D2 - 1 for row in s.R)
        and len(s.C_coeff) == s.D1 - 1
        and all(len(row) == s.D2 - 1 for row in s.C_coeff)
    )
    rep.add("exponent tables shaped (D1-1) x (D2-1)", shapes_ok, None, None)
    if not shapes_ok:
        return rep

    rep.add(
        "d_main + delta_tilde_main positive integer",
        (s.d_main + s.delta_tilde_main).denominator == 1
        and s.d_main + s.delta_tilde_main > 0,
        str(s.d_main + s.delta_tilde_main),
        "integer >= 1",
    )
    rep.add(
        "delta_tilde entries are nonnegative integers",
        all(x >= 0 for x in s.delta_tilde) and s.delta_tilde_main >= 0,
        s.delta_tilde,
        ">= 0",
    )

    # main-index balance: the epsilon power of the dominant term vanishes
    lhs = s.Delta_main
    rhs = s.lambda1 * s.d_main + s.lambda2 * s.k2 * Fraction(s.delta_tilde_main)
    rep.add("main epsilon balance (Delta_main)", lhs == rhs, str(lhs), str(rhs))

    for i1 in range(s.D1 - 1):
        for i2 in range(s.D2 - 1):
            tag = f"(l1={i1 + 1},l2={i2 + 1})"
            lhs = Fraction(s.delta_tilde[i2])
            rhs = (
                (Fraction(s.k1p, s.k1) - 1) * s.d[i1]
                + s.d_main
                + s.delta_tilde_main
                - s.k1p * s.delta[i1]
            )
            rep.add(f"growth-order budget {tag}", lhs <= rhs, str(lhs), str(rhs))
            lhs2 = s.lambda1 * s.d[i1] + s.lambda2 * s.k2 * Fraction(s.delta_tilde[i2])
            rep.add(
                f"perturbation epsilon power positive {tag}",
                lhs2 < s.Delta[i1][i2],
                str(lhs2),
                str(s.Delta[i1][i2]),
            )
            rep.add(
                f"inward dilation {tag}",
                s.k1 * s.delta[i1] < s.d[i1],
                str(s.k1 * s.delta[i1]),
                str(s.d[i1]),
            )
            dr = poly_degree(s.R[i1][i2])
            rep.add(
                f"R degree dominance {tag}",
                poly_degree(s.R_main) >= dr,
                poly_degree(s.R_main),
                dr,
            )
            rep.add(f"mu exceeds deg R + 1 {tag}", s.mu > dr + 1, s.mu, dr + 1)

    rep.add(
        "deg R_main <= deg Q",
        poly_degree(s.R_main) <= poly_degree(s.Q),
        poly_degree(s.R_main),
        poly_degree(s.Q),
    )

    # boundary-layer exponents
    rep.add("mu2 > lambda2", s.mu2 > s.lambda2, s.mu2, s.lambda2)
    lhs3 = s.k1 * s.lambda1**2
    rhs3 = s.k1p * ((s.mu2 - s.lambda2) * s.k2) ** 2
    rep.add("inner-vs-outer order gap", lhs3 > rhs3, lhs3, rhs3)

    # symbol sector: Q(im)/R_main(im) confined to a proper sector away from 0
    m = np.linspace(-max(4 * s.m_max, 64.0), max(4 * s.m_max, 64.0), 4001)
    rm = poly_eval(s.R_main, 1j * m)
    if np.min(np.abs(rm)) < 1e-12:
        rep.add("R_main nonvanishing on the real symbol line", False,
                float(np.min(np.abs(rm))), ">0")
        return rep
    rep.add("R_main nonvanishing on the real symbol line", True,
            float(np.min(np.abs(rm))), ">0")
    ratio = poly_eval(s.Q, 1j * m) / rm
    rmin = float(np.min(np.abs(ratio)))
    args = np.angle(ratio)
    mean_dir = math.atan2(float(np.mean(np.sin(args))), float(np.mean(np.cos(args))))
    half_ap = float(np.max(angle_dist(args, mean_dir)))
    rep.add("symbol quotient bounded away from zero", rmin > 1e-9, rmin, 0.0)
    rep.add(
        "symbol quotient within a proper sector",
        half_ap < math.pi / 2 - 1e-3,
        half_ap,
        math.pi / 2,
        note=f"fitted direction {mean_dir:.6f}, radius {rmin:.6g}",
    )
    # leading behavior governs |m| -> infinity; degrees equal keeps the
    # quotient bounded, otherwise the argument must stabilize
    dq, dr = poly_degree(s.Q), poly_degree(s.R_main)
    if dq > dr:
        lead = np.asarray(s.Q, complex)[dq] / np.asarray(s.R_main, complex)[dr]
        stable = angle_dist(
            np.angle(lead * 1j ** (dq - dr)), mean_dir
        ) <= half_ap + 1e-9 and angle_dist(
            np.angle(lead * (-1j) ** (dq - dr)), mean_dir
        ) <= half_ap + 1e-9
        rep.add("symbol quotient leading-term in sector", bool(stable),
                float(np.angle(lead * 1j ** (dq - dr))), mean_dir)
    return rep


# ------------------------------------------------------------------ P_m

def pm_eval(s: ProblemSpec, tau, m):
    """Characteristic polynomial Q(im) - c tau^{d+dt} R_main(im)."""
    tau = np.asarray(tau, complex)
    im = 1j * np.asarray(m, float)
    power = float(s.d_main + s.delta_tilde_main)
    return poly_eval(s.Q, im) - s.main_coefficient() * tau**power * poly_eval(
        s.R_main, im
    )


def pm_roots(s: ProblemSpec, m: float) -> np.ndarray:
    """The d+dt roots of P_m, equally spaced on a circle of radius Delta_m."""
    im = 1j * float(m)
    r_val = complex(poly_eval(s.R_main, im))
    if abs(r_val) < 1e-14:
        raise DomainError(f"R_main(im) vanishes at m = {m}")
    q_val = complex(poly_eval(s.Q, im))
    n = s.root_count
    c = s.main_coefficient()
    modulus = (abs(q_val) / (c * abs(r_val))) ** (1.0 / n)
    base_arg = np.angle(q_val / (c * r_val)) / n
    ells = np.arange(n)
    return modulus * np.exp(1j * (base_arg + _TWO_PI * ells / n))


def sector_separation(
    s: ProblemSpec,
    direction: float,
    rho: float = None,
    m_grid: np.ndarray = None,
    half_aperture: float = 0.15,
    n_radial: int = 160,
    r_max: float = 1e4,
) -> GeometryReport:
    """Infimum constants of the root-separation geometry along a direction.

    M1 is the infimum of |tau - root|/(1+|tau|) over the sector-plus-disc
    region and all roots; C_P the infimum of
    |P_m(tau)| / (|R_main(im)| (1+|tau|)^{d+dt}).  Both are grid infima:
    refining the grids can only lower them.
    """
    rho = s.rho if rho is None else rho
    m_grid = s.m_grid() if m_grid is None else np.asarray(m_grid, float)
    power = float(s.d_main + s.delta_tilde_main)

    radii = np.concatenate(
        [
            np.linspace(1e-6, rho, max(8, n_radial // 8)),
            np.exp(np.linspace(math.log(rho), math.log(r_max), n_radial)),
        ]
    )
    # the disc contributes all angles; the sector only those near direction
    disc_angles = np.linspace(0.0, _TWO_PI, 49, endpoint=False)
    ray_angles = direction + np.linspace(-half_aperture, half_aperture, 7)
    tau_disc = np.linspace(1e-6, rho, max(8, n_radial // 8))[:, None] * np.exp(
        1j * disc_angles
    )[None, :]
    tau_ray = radii[:, None] * np.exp(1j * ray_angles)[None, :]
    tau_all = np.concatenate([tau_disc.ravel(), tau_ray.ravel()])

    m1 = math.inf
    cp = math.inf
    worst = {"M1": None, "C_P": None}
    for m in m_grid:
        roots = pm_roots(s, float(m))
        dist = np.min(np.abs(tau_all[:, None] - roots[None, :]), axis=1)
        ratio = dist / (1.0 + np.abs(tau_all))
        j = int(np.argmin(ratio))
        if ratio[j] < m1:
            m1 = float(ratio[j])
            worst["M1"] = (complex(tau_all[j]), float(m))
        pm = np.abs(pm_eval(s, tau_all, m))
        rmod = abs(complex(poly_eval(s.R_main, 1j * m)))
        cr = pm / (rmod * (1.0 + np.abs(tau_all)) ** power)
        j = int(np.argmin(cr))
        if cr[j] < cp:
            cp = float(cr[j])
            worst["C_P"] = (complex(tau_all[j]), float(m))
    admissible = m1 > 1e-3 and cp > 1e-6
    return GeometryReport(
        M1=m1,
        C_P=cp,
        admissible=admissible,
        diagnostics=[worst],
    )


# ------------------------------------------------------------------ covering

def _window_margin_a(gamma: float, eps_sector: Sector, t1: Sector, lambda1: int):
    # min over the phase window of min_r |1 + r e^{i phi}|, which is 1 when
    # cos(phi) >= 0 and |sin(phi)| otherwise; smallest at the window point
    # closest to pi
    lo = gamma - lambda1 * eps_sector.angle_hi - t1.angle_hi
    hi = gamma - lambda1 * eps_sector.angle_lo - t1.angle_lo
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if half >= math.pi:
        return 0.0  # window wraps the whole circle
    gap = float(angle_dist(center, math.pi))
    if gap <= half:
        return 0.0
    closest = gap - half  # angular distance from the window edge to pi
    if closest >= math.pi / 2:
        return 1.0
    return math.sin(closest)


def _window_margin_b(gamma: float, eps_sector: Sector, t2: Sector, k2: int, lambda2: int):
    lo = gamma - k2 * (lambda2 * eps_sector.angle_hi + t2.angle_hi)
    hi = gamma - k2 * (lambda2 * eps_sector.angle_lo + t2.angle_lo)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    # recenter window around 0 mod 2 pi
    center = math.remainder(center, _TWO_PI)
    extreme = abs(center) + half
    if extreme >= math.pi / 2:
        return 0.0, 0.0
    delta2 = math.pi / 2 - extreme
    delta3 = math.cos(extreme)
    return delta2, delta3


def _root_ray_args(s: ProblemSpec) -> np.ndarray:
    # root arguments depend on m only through arg(Q/R); collect the set
    args = []
    for m in np.linspace(-s.m_max, s.m_max, 41):
        args.extend(np.angle(pm_roots(s, float(m))))
    return np.asarray(args)


def build_good_covering(
    s: ProblemSpec,
    iota: int,
    overlap: float,
    kind: str = "outer",
    t1: Sector = None,
    t2: Sector = None,
    chi2: dict = None,
    rho2: float = None,
    half_aperture: float = 0.15,
    n_candidates: int = 1440,
) -> SectorCovering:
    """Equal sectors covering the punctured disc, with ray directions.

    Every sector gets a direction gamma_h chosen by maximizing the least
    of three geometric margins: distance of the theta-pole phase window
    from pi, the width margin of the exponential half-plane window, and
    the angular gap from the characteristic-root rays.
    """
    if iota < 2:
        raise ValidationError("a covering needs at least two sectors")
    if not 0.0 < overlap < _TWO_PI / iota:
        raise ValidationError(
            f"overlap must lie in (0, 2 pi / iota); got {overlap}"
        )
    if kind not in ("inner", "outer"):
        raise ValidationError(f"covering kind must be inner or outer, got {kind!r}")
    aperture = _TWO_PI / iota + overlap
    if t1 is None:
        ap1 = math.pi / (8 * s.lambda1)
        t1 = Sector(-ap1 / 2, ap1 / 2, 0.0, 1.0)
    if t2 is None:
        ap2 = math.pi / (8 * s.k2)
        t2 = Sector(-ap2 / 2, ap2 / 2, 0.0, math.inf)

    candidates = np.linspace(0.0, _TWO_PI, n_candidates, endpoint=False)
    root_args = _root_ray_args(s)
    root_gap = (
        np.min(angle_dist(candidates[:, None], root_args[None, :]), axis=1)
        - half_aperture
    )
    sectors, directions, margins, thetas = [], [], [], []
    for h in range(iota):
        center = _TWO_PI * h / iota
        sec = Sector(center - aperture / 2, center + aperture / 2, 0.0, s.epsilon0)
        best = None
        for j, g in enumerate(candidates):
            ma = _window_margin_a(g, sec, t1, s.lambda1)
            d2, d3 = _window_margin_b(g, sec, t2, s.k2, s.lambda2)
            mc = float(root_gap[j])
            # root separation is intrinsic to the Borel plane and breaks
            # ties; the time-window margins can be retuned by the caller
            merit = (min(ma, d3, mc), mc)
            if best is None or merit > best[0]:
                best = (merit, g, ma, d2, d3, mc)
        _, g, ma, d2, d3, mc = best
        if mc <= 0.05:
            raise GeometryError(
                f"no admissible direction for sector {h}: best margins "
                f"pole={ma:.3f} cos={d3:.3f} roots={mc:.3f} at gamma={g:.3f}"
            )
        sectors.append(sec)
        directions.append(float(g))
        margins.append(
            {"pole": ma, "delta2": d2, "delta3": d3, "root_gap": mc}
        )
        if kind == "inner":
            # rotate t2 so that eps^{lambda2} x2 / eps^{mu2} stays centered
            # in the t2 window when arg eps sits at the sector center
            thetas.append(t2.center + (s.mu2 - s.lambda2) * center)
    if kind == "inner" and chi2 is None:
        chi2 = {"r_lo": 0.25, "r_hi": 0.75}
    if kind == "outer" and rho2 is None:
        rho2 = 0.5
    return SectorCovering(
        iota=iota,
        sectors=sectors,
        directions=directions,
        kind=kind,
        margins=margins,
        t1=t1,
        t2=t2,
        theta_h=thetas if kind == "inner" else None,
        chi2=chi2,
        rho2=rho2 if kind == "outer" else math.nan,
    )


def check_admissible(
    cov: SectorCovering, t1: Sector, t2: Sector, s: ProblemSpec
) -> GeometryReport:
    """Geometry constants of the covering against concrete time sectors.

    delta1 bounds the theta-pole distance |1 + r e^{i gamma} / T1| from
    below, delta2 the angular slack of gamma - k2 arg(T2) inside the
    cosine half-plane, delta3 the cosine itself; corner arithmetic is
    exact because each margin is monotone on the angular rectangle.
    """
    d1 = math.inf
    d2 = math.inf
    d3 = math.inf
    diagnostics = []
    for h in range(cov.iota):
        g = cov.directions[h]
        sec = cov.sectors[h]
        ma = _window_margin_a(g, sec, t1, s.lambda1)
        m2, m3 = _window_margin_b(g, sec, t2, s.k2, s.lambda2)
        if ma < d1:
            d1 = ma
        if m2 < d2:
            d2 = m2
        if m3 < d3:
            d3 = m3
        diagnostics.append({"h": h, "pole": ma, "delta2": m2, "delta3": m3})
    return GeometryReport(
        delta1=d1,
        delta2=d2,
        delta3=d3,
        admissible=min(d1, d2, d3) > 0.0,
        diagnostics=diagnostics,
    )


# ------------------------------------------------------------------ bundled

def reference_instance(c_scale: float = 30.0, psi_scale: float = 1.0) -> ProblemSpec:
    """The bundled smallest-nontrivial instance used across the test bed.

    One perturbation term, quadratic main symbol 4 + m^2 (positive on the
    whole symbol line), cubic characteristic polynomial with roots of
    modulus >= 2, coefficient scale calibrated so the fixed-point map
    contracts comfortably at half the nominal epsilon radius and fails to
    contract past about 1.3 times that radius.
    """
    return ProblemSpec(
        q=2.0,
        k1=1,
        k2=1,
        k1p=2,
        k1pp=0.9,
        D1=2,
        D2=2,
        Delta=[[8]],
        Delta_main=Fraction(7),
        d=[Fraction(2)],
        d_main=Fraction(2),
        delta=[Fraction(1)],
        delta_tilde=[0],
        delta_tilde_main=1,
        lambda1=3,
        lambda2=1,
        mu2=2,
        Q=[4.0, 0.0, -1.0],
        R=[[[1.0]]],
        R_main=[1.0],
        mu=3.0,
        beta=1.0,
        alpha=0.0,
        delta_off=2.0,
        rho=1.0,
        epsilon0=0.5,
        C_coeff=[[{"type": "smooth_decay", "scale": c_scale}]],
        psi={"type": "linear_tau", "scale": psi_scale},
        m_max=16.0,
        m_step=0.125,
    )
