"""Convergence-rate constant ladder and bound verification.

This module evaluates every constant appearing in the tracking-error
analysis: the descent-balance pair (D, E), the two large error-amplification
polynomials (F, G), the per-epoch gap cap a with its recursion, the step
size cap gamma_max, the contraction factor rho = 1 - gamma * c, and the
window caps b and d.  It also provides the per-epoch bound triples, the
infinite-horizon tracking bound, the minimal operations-per-epoch count r
achieving a requested error, and the checker that compares all of these
against a simulated trace.

Two formula variants are shipped deliberately:

* the per-epoch gap recursion multiplies the minimizer-drift term
  ``L_J sigma (1 + ||C||)`` with ``(M_x + M_y ||C||) B diam(X)`` while the
  asymptotic drift constant V adds them; and
* the first-epoch beta cap has both a ladder form (B diam(X)^2) and a
  derived form D a_0 / (8 E (G/F + E/D) F).

Each variant is computed under its own name and used where its theorem uses
it; beta checks take the max of the two caps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from afosim.objective import EpochConstants

__all__ = [
    "constants_DE",
    "f_term_table",
    "g_term_table",
    "constants_FG",
    "GammaMaxResult",
    "gamma_max",
    "a_initial",
    "a_recursion_as_printed",
    "V_as_printed",
    "b0_theorem1",
    "EpochTheory",
    "TheoryConstants",
    "build_theory",
    "auto_gamma",
    "auto_gammas_for",
    "rate_and_bounds",
    "asymptotic_bound",
    "r_min",
    "BoundCheckReport",
    "check_bounds_on_trace",
]

_E_DEGENERATE_FLOOR = 1e-12

GAMMA_MAX_TERMS = (
    "update-balance",        # 2 / ((3N+1) B Lx + (3N^2+1) B C^2 Ly)
    "descent-positivity",    # 2 / ((1+B) Lx + (1+BN) C^2 Ly)
    "D-over-E",
    "inverse-GF-ED",
    "half-over-c",
    "D-over-8F-GF-ED-c",
    "quadratic-root",
    "one-half",
)


def constants_DE(ec: EpochConstants, gamma: float, B: int, N: int, normC: float):
    """Descent-balance constants of one epoch at step size gamma."""
    if gamma <= 0 or B < 1 or N < 1:
        raise ValueError("gamma, B and N must be positive")
    D = (2.0 - gamma * ((1.0 + B) * ec.L_x + (1.0 + B * N) * normC**2 * ec.L_y)) / 2.0
    E = N * B * (ec.L_x + ec.L_y * N * normC**2) / 2.0
    return D, E


def f_term_table(
    L: float, L_x: float, L_y: float, B: int, N: int, m: int, normC: float, lam: float
) -> list[tuple[str, float]]:
    """Addends of the F polynomial, bracket weights applied; F = 0.5 * sum."""
    C2, C4, C6 = normC**2, normC**4, normC**6
    L2 = L * L
    w = 1.0 + lam * lam
    lam2 = lam * lam
    return [
        # (1 + lambda^2)-weighted group
        ("(1+l2) 36 B^3 C^6 L^2 Ly^2 N^2 m", w * 36 * B**3 * C6 * L2 * L_y**2 * N**2 * m),
        ("(1+l2) 72 B^3 C^4 L^2 Lx Ly N^2 m", w * 72 * B**3 * C4 * L2 * L_x * L_y * N**2 * m),
        ("(1+l2) 36 B L^2 Lx^2 N^2", w * 36 * B * L2 * L_x**2 * N**2),
        ("(1+l2) 36 B^3 C^2 L^2 Lx^2 N^2 m", w * 36 * B**3 * C2 * L2 * L_x**2 * N**2 * m),
        ("(1+l2) 36 B C^4 L^2 Ly^2 N^2", w * 36 * B * C4 * L2 * L_y**2 * N**2),
        ("(1+l2) 18 C^2 Lx Ly N", w * 18 * C2 * L_x * L_y * N),
        ("(1+l2) 72 B C^2 L^2 Lx Ly N^2", w * 72 * B * C2 * L2 * L_x * L_y * N**2),
        ("(1+l2) 9 C^4 Ly^2 N", w * 9 * C4 * L_y**2 * N),
        # standalone
        ("3 B^2 C^6 L^2 Ly^2 N^2 m", 3 * B**2 * C6 * L2 * L_y**2 * N**2 * m),
        # ||C||^4-weighted group
        ("C^4 72 B^3 L^2 Ly N^2 m", C4 * 72 * B**3 * L2 * L_y * N**2 * m),
        ("C^4 6 B^2 L^2 Lx Ly N^2 m", C4 * 6 * B**2 * L2 * L_x * L_y * N**2 * m),
        ("C^4 6 B^2 L^2 Ly N^2 m", C4 * 6 * B**2 * L2 * L_y * N**2 * m),
        ("C^4 3 L^2 Ly^2 N^2", C4 * 3 * L2 * L_y**2 * N**2),
        ("C^4 3 B^2 Ly^2 N m", C4 * 3 * B**2 * L_y**2 * N * m),
        # ||C||^2-weighted group
        ("C^2 96 B^3 L^2 N^2 m", C2 * 96 * B**3 * L2 * N**2 * m),
        ("C^2 72 B^3 L^2 Lx N^2 m", C2 * 72 * B**3 * L2 * L_x * N**2 * m),
        ("C^2 72 B L^2 Ly N^2", C2 * 72 * B * L2 * L_y * N**2),
        ("C^2 60 B^3 L^2 N^2 l2 m", C2 * 60 * B**3 * L2 * N**2 * lam2 * m),
        ("C^2 18 Ly N", C2 * 18 * L_y * N),
        ("C^2 8 B^2 L^2 N^2 m", C2 * 8 * B**2 * L2 * N**2 * m),
        ("C^2 6 B^2 L^2 Lx N^2 m", C2 * 6 * B**2 * L2 * L_x * N**2 * m),
        ("C^2 6 L^2 Lx Ly N^2", C2 * 6 * L2 * L_x * L_y * N**2),
        ("C^2 6 L^2 Ly N^2", C2 * 6 * L2 * L_y * N**2),
        ("C^2 3 B^2 L^2 Lx^2 N^2 m", C2 * 3 * B**2 * L2 * L_x**2 * N**2 * m),
        # trailing terms
        ("3 L^2 Lx^2 N^2", 3 * L2 * L_x**2 * N**2),
        ("96 B L^2 N^2", 96 * B * L2 * N**2),
        ("6 L^2 Lx N^2", 6 * L2 * L_x * N**2),
        ("8 L^2 N^2", 8 * L2 * N**2),
        ("60 B L^2 N^2 l2", 60 * B * L2 * N**2 * lam2),
        ("72 B L^2 Lx N^2", 72 * B * L2 * L_x * N**2),
        ("12 Lx^2 N", 12 * L_x**2 * N),
        ("9 Lx^2 N l2", 9 * L_x**2 * N * lam2),
        ("18 Lx N", 18 * L_x * N),
        ("15 N l2", 15 * N * lam2),
        ("24 N", 24.0 * N),
        ("2", 2.0),
    ]


def g_term_table(
    L: float, L_x: float, L_y: float, B: int, N: int, m: int, normC: float, lam: float
) -> list[tuple[str, float]]:
    """Addends of the G polynomial, bracket weights applied; G = (N/2) * sum."""
    C2, C4, C6 = normC**2, normC**4, normC**6
    L2 = L * L
    w = 1.0 + lam * lam
    lam2 = lam * lam
    return [
        # (1 + lambda^2)-weighted group
        ("(1+l2) 72 B^3 C^4 L^2 Lx Ly N m", w * 72 * B**3 * C4 * L2 * L_x * L_y * N * m),
        ("(1+l2) 72 B C^2 L^2 Lx Ly N", w * 72 * B * C2 * L2 * L_x * L_y * N),
        ("(1+l2) 36 B^3 C^6 L^2 Ly^2 N m", w * 36 * B**3 * C6 * L2 * L_y**2 * N * m),
        ("(1+l2) 36 B^3 C^2 L^2 Lx^2 N m", w * 36 * B**3 * C2 * L2 * L_x**2 * N * m),
        ("(1+l2) 36 B C^4 L^2 Ly^2 N", w * 36 * B * C4 * L2 * L_y**2 * N),
        ("(1+l2) 36 B L^2 Lx^2 N", w * 36 * B * L2 * L_x**2 * N),
        # standalone
        ("3 B^2 C^6 L^2 Ly^2 N m", 3 * B**2 * C6 * L2 * L_y**2 * N * m),
        # ||C||^4-weighted group
        ("C^4 72 B^3 L^2 Ly N m", C4 * 72 * B**3 * L2 * L_y * N * m),
        ("C^4 6 B^2 L^2 Lx Ly N m", C4 * 6 * B**2 * L2 * L_x * L_y * N * m),
        ("C^4 6 B^2 L^2 Ly N m", C4 * 6 * B**2 * L2 * L_y * N * m),
        ("C^4 3 B^2 Ly^2 m", C4 * 3 * B**2 * L_y**2 * m),
        ("C^4 3 L^2 Ly^2 N", C4 * 3 * L2 * L_y**2 * N),
        # ||C||^2-weighted group
        ("C^2 96 B^3 L^2 N m", C2 * 96 * B**3 * L2 * N * m),
        ("C^2 72 B^3 L^2 Lx N m", C2 * 72 * B**3 * L2 * L_x * N * m),
        ("C^2 72 B L^2 Ly N", C2 * 72 * B * L2 * L_y * N),
        ("C^2 60 B^3 L^2 N l2 m", C2 * 60 * B**3 * L2 * N * lam2 * m),
        ("C^2 8 B^2 L^2 N m", C2 * 8 * B**2 * L2 * N * m),
        ("C^2 6 B^2 L^2 Lx N m", C2 * 6 * B**2 * L2 * L_x * N * m),
        ("C^2 6 L^2 Lx Ly N", C2 * 6 * L2 * L_x * L_y * N),
        ("C^2 6 L^2 Ly N", C2 * 6 * L2 * L_y * N),
        ("C^2 3 B^2 L^2 Lx^2 N m", C2 * 3 * B**2 * L2 * L_x**2 * N * m),
        ("C^2 B Ly N", C2 * B * L_y * N),
        # trailing terms
        ("96 B L^2 N", 96 * B * L2 * N),
        ("72 B L^2 Lx N", 72 * B * L2 * L_x * N),
        ("60 B L^2 N l2", 60 * B * L2 * N * lam2),
        ("8 L^2 N", 8 * L2 * N),
        ("6 L^2 Lx N", 6 * L2 * L_x * N),
        ("3 Lx^2", 3 * L_x**2),
        ("3 L^2 Lx^2 N", 3 * L2 * L_x**2 * N),
        ("B Lx", float(B) * L_x),
    ]


def constants_FG(ec: EpochConstants, B: int, N: int, m: int, normC: float, lam: float):
    """Error-amplification polynomials (F, G) of one epoch."""
    args = (ec.L, ec.L_x, ec.L_y, B, N, m, normC, lam)
    F = 0.5 * math.fsum(v for _, v in f_term_table(*args))
    G = 0.5 * N * math.fsum(v for _, v in g_term_table(*args))
    for name, val in (("F", F), ("G", G)):
        if not np.isfinite(val):
            raise ValueError(f"{name} evaluated to a non-finite value")
    return F, G


@dataclass(frozen=True)
class GammaMaxResult:
    value: float
    terms: dict[str, float]
    e_degenerate: bool = False
    discriminant_clamped: bool = False


def gamma_max(
    ec: EpochConstants,
    D: float,
    E: float,
    F: float,
    G: float,
    a: float,
    b: float,
    c: float,
    B: int,
    N: int,
    normC: float,
) -> GammaMaxResult:
    """Step size cap: the minimum of the eight cap expressions.

    Zero denominators make a term vacuous (it drops out of the min); an E
    below the degeneracy floor is evaluated at the floor (continuous limit)
    and flagged.  The quadratic-root discriminant is analytically
    non-negative; if rounding makes it negative it is clamped to zero with
    a warning.
    """
    C2 = normC**2
    terms: dict[str, float] = {}
    e_degenerate = False
    clamped = False

    def safe_div(num: float, den: float) -> float:
        return num / den if den > 0.0 else math.inf

    terms["update-balance"] = safe_div(2.0, (3 * N + 1) * B * ec.L_x + (3 * N**2 + 1) * B * C2 * ec.L_y)
    terms["descent-positivity"] = safe_div(2.0, (1 + B) * ec.L_x + (1 + B * N) * C2 * ec.L_y)
    terms["D-over-E"] = safe_div(D, E)
    terms["inverse-GF-ED"] = safe_div(1.0, G / F + E / D)
    terms["half-over-c"] = safe_div(1.0, 2.0 * c)
    terms["D-over-8F-GF-ED-c"] = safe_div(D, 8.0 * F * (G / F + E / D) * c)

    E_eff = E
    if E < _E_DEGENERATE_FLOOR:
        E_eff = _E_DEGENERATE_FLOOR
        e_degenerate = True
    A = a / b + 2.0 * E_eff + D * c
    disc = A * A - 4.0 * D * E_eff * c
    if disc < 0.0:
        warnings.warn(
            f"gamma_max quadratic-root discriminant {disc:.3e} clamped to 0 "
            "(rounding; analytically non-negative)"
        )
        disc = 0.0
        clamped = True
    # Rationalized smaller root of E c g^2 - A g + D = 0; identical to
    # (A - sqrt(disc)) / (2 E c) but immune to cancellation when disc ~ A^2.
    terms["quadratic-root"] = 2.0 * D / (A + math.sqrt(disc))
    terms["one-half"] = 0.5

    for name, val in terms.items():
        if math.isnan(val):
            raise ValueError(f"gamma_max term {name!r} evaluated to NaN")
    value = min(terms.values())
    if not (value > 0.0 and math.isfinite(value)):
        raise ValueError(f"gamma_max is not positive and finite: {value}")
    return GammaMaxResult(value=value, terms=terms, e_degenerate=e_degenerate, discriminant_clamped=clamped)


def _amplification(D: float, E: float, F: float, G: float) -> float:
    """The recurring composite 8 E (G/F + E/D) F."""
    return 8.0 * E * (G / F + E / D) * F


def a_initial(ec: EpochConstants, D: float, E: float, F: float, G: float, B: int, normC: float, diamX: float) -> float:
    """First-epoch gap cap: the larger of the Lipschitz diameter cap and the
    amplified window cap."""
    return max(
        ec.L_J * (1.0 + normC) * diamX,
        _amplification(D, E, F, G) / D * B * diamX**2,
    )


def a_recursion_as_printed(
    a_prev: float,
    rho_prev: float,
    r_prev: int,
    ec: EpochConstants,
    D: float,
    E: float,
    F: float,
    G: float,
    B: int,
    normC: float,
    diamX: float,
) -> float:
    """Per-epoch gap cap recursion, with the drift product as printed."""
    drift = (
        ec.L_J
        * ec.sigma
        * (1.0 + normC)
        * (ec.M_x + ec.M_y * normC)
        * B
        * diamX
    )
    tail = (
        _amplification(D, E, F, G)
        * B**2
        * diamX**2
        * (ec.L_x + ec.L_y * normC**2)
        / (2.0 * D)
    )
    return a_prev * rho_prev ** (r_prev - 1) + 2.0 * ec.Delta * ec.L_t + drift + tail


def V_as_printed(
    ec: EpochConstants,
    D: float,
    E: float,
    F: float,
    G: float,
    B: int,
    normC: float,
    diamX: float,
) -> float:
    """Asymptotic per-epoch drift constant, with the drift terms added."""
    return (
        2.0 * ec.Delta * ec.L_t
        + ec.L_J * ec.sigma * (1.0 + normC)
        + (ec.M_x + ec.M_y * normC) * B * diamX
        + _amplification(D, E, F, G) * B**2 * diamX**2 * (ec.L_x + ec.L_y * normC**2) / (2.0 * D)
    )


def b0_theorem1(D: float, E: float, F: float, G: float, a0: float) -> float:
    """First-epoch beta cap in its derived form."""
    return D * a0 / _amplification(D, E, F, G)


@dataclass(frozen=True)
class EpochTheory:
    """All ladder constants of one epoch at the step size actually used.

    ``gamma_c`` is the product gamma * c; with the very conservative F the
    product can round 1 - gamma_c to exactly 1.0 in floats, so contraction
    powers are always taken in log space from gamma_c.
    """

    gamma: float
    D: float
    E: float
    F: float
    G: float
    c: float
    gamma_c: float
    rho: float
    gamma_max: GammaMaxResult
    a: float
    V: float
    b: float
    d: float
    b_theorem1: float | None
    thm2_hypothesis_ok: bool

    def decay(self, power: int) -> float:
        """rho ** power evaluated without rounding gamma_c away."""
        if power == 0:
            return 1.0
        return math.exp(power * math.log1p(-self.gamma_c))

    def lines(self, ell: int) -> list[str]:
        out = [
            f"epoch {ell} gamma {self.gamma!r}",
            f"epoch {ell} D {self.D!r}",
            f"epoch {ell} E {self.E!r}",
            f"epoch {ell} F {self.F!r}",
            f"epoch {ell} G {self.G!r}",
            f"epoch {ell} c {self.c!r}",
            f"epoch {ell} gamma_c {self.gamma_c!r}",
            f"epoch {ell} rho {self.rho!r}",
            f"epoch {ell} gamma_max {self.gamma_max.value!r}",
            f"epoch {ell} a {self.a!r}",
            f"epoch {ell} V {self.V!r}",
            f"epoch {ell} b {self.b!r}",
            f"epoch {ell} d {self.d!r}",
        ]
        if self.b_theorem1 is not None:
            out.append(f"epoch {ell} b_theorem1 {self.b_theorem1!r}")
        out.append(f"epoch {ell} thm2_hypothesis_ok {self.thm2_hypothesis_ok}")
        return out


@dataclass(frozen=True)
class TheoryConstants:
    per_epoch: tuple[EpochTheory, ...]
    V_inf: float
    rho_inf: float
    V_max: float
    rho_max: float

    def report(self) -> str:
        lines: list[str] = []
        for ell, et in enumerate(self.per_epoch):
            lines.extend(et.lines(ell))
        lines.append(f"aggregate V_inf {self.V_inf!r}")
        lines.append(f"aggregate rho_inf {self.rho_inf!r}")
        lines.append(f"aggregate V_max {self.V_max!r}")
        lines.append(f"aggregate rho_max {self.rho_max!r}")
        return "\n".join(lines) + "\n"


def build_theory(
    constants: Sequence[EpochConstants],
    gammas: Sequence[float],
    r_values: Sequence[int],
    B: int,
    N: int,
    m: int,
    normC: float,
    diamX: float,
    enforce_gamma_cap: bool = False,
) -> TheoryConstants:
    """Evaluate the complete ladder for a run.

    The ladder is evaluated at the step sizes actually used.  With
    ``enforce_gamma_cap`` the builder raises if any gamma reaches its cap,
    naming the binding term.
    """
    if not (len(constants) == len(gammas) == len(r_values)):
        raise ValueError("constants, gammas and r_values must have equal length")
    per_epoch: list[EpochTheory] = []
    a_prev = rho_prev = None
    for ell, (ec, gamma, r) in enumerate(zip(constants, gammas, r_values)):
        gamma = float(gamma)
        D, E = constants_DE(ec, gamma, B, N, normC)
        if D <= 0.0:
            raise ValueError(f"epoch {ell}: D={D} is not positive (gamma too large)")
        F, G = constants_FG(ec, B, N, m, normC, ec.lambda_eb)
        c = D / (2.0 * F + 2.0 * D)
        if not 0.0 < c < 0.5:
            raise ValueError(f"epoch {ell}: c={c} outside (0, 1/2)")
        if ell == 0:
            a = a_initial(ec, D, E, F, G, B, normC, diamX)
        else:
            a = a_recursion_as_printed(
                a_prev, rho_prev, r_values[ell - 1], ec, D, E, F, G, B, normC, diamX
            )
        b = B * diamX**2
        d = B**2 * m * normC**2 * b
        gm = gamma_max(ec, D, E, F, G, a, b, c, B, N, normC)
        if enforce_gamma_cap and gamma >= gm.value:
            binding = min(gm.terms, key=gm.terms.get)
            raise ValueError(
                f"epoch {ell}: gamma={gamma} is not below gamma_max={gm.value} "
                f"(binding term {binding!r})"
            )
        gamma_c = gamma * c
        if not 0.0 < gamma_c < 1.0:
            raise ValueError(f"epoch {ell}: gamma*c={gamma_c} outside (0, 1), rho invalid")
        rho = 1.0 - gamma_c
        V = V_as_printed(ec, D, E, F, G, B, normC, diamX)
        per_epoch.append(
            EpochTheory(
                gamma=gamma,
                D=D,
                E=E,
                F=F,
                G=G,
                c=c,
                gamma_c=gamma_c,
                rho=rho,
                gamma_max=gm,
                a=a,
                V=V,
                b=b,
                d=d,
                b_theorem1=b0_theorem1(D, E, F, G, a) if ell == 0 else None,
                thm2_hypothesis_ok=bool(2.0 / (B * (ec.L_x + ec.L_y * normC**2)) <= 1.0),
            )
        )
        a_prev, rho_prev = a, rho
    V_inf = max(per_epoch[0].a, max(et.V for et in per_epoch))
    rho_inf = max(et.rho for et in per_epoch)
    return TheoryConstants(
        per_epoch=tuple(per_epoch),
        V_inf=V_inf,
        rho_inf=rho_inf,
        V_max=V_inf,
        rho_max=rho_inf,
    )


def auto_gamma(
    ec: EpochConstants,
    B: int,
    N: int,
    m: int,
    normC: float,
    diamX: float,
    a_prev: float | None = None,
    rho_prev: float | None = None,
    r_prev: int | None = None,
    safety: float = 0.9,
    max_iter: int = 100,
) -> float:
    """Resolve gamma = safety * gamma_max by fixed-point iteration.

    D and c depend on gamma, so the cap is self-referential; the iteration
    starts below the descent-positivity cap and converges to a
    self-consistent step.  The returned gamma always satisfies
    gamma < gamma_max(gamma).
    """
    if not 0.0 < safety < 1.0:
        raise ValueError("safety factor must lie in (0, 1)")
    F, G = constants_FG(ec, B, N, m, normC, ec.lambda_eb)
    denom = (1.0 + B) * ec.L_x + (1.0 + B * N) * normC**2 * ec.L_y
    b = B * diamX**2

    def cap_at(gamma: float) -> float:
        D, E = constants_DE(ec, gamma, B, N, normC)
        c = D / (2.0 * F + 2.0 * D)
        if a_prev is None:
            a = a_initial(ec, D, E, F, G, B, normC, diamX)
        else:
            a = a_recursion_as_printed(
                a_prev, rho_prev, r_prev, ec, D, E, F, G, B, normC, diamX
            )
        return gamma_max(ec, D, E, F, G, a, b, c, B, N, normC).value

    gamma = min(0.5, 1.0 / denom)
    for _ in range(max_iter):
        new = safety * cap_at(gamma)
        if abs(new - gamma) <= 1e-13 * max(abs(new), abs(gamma)):
            gamma = new
            break
        gamma = new
    # Self-consistency: back off until strictly below the cap at the final point.
    for _ in range(64):
        if gamma < cap_at(gamma):
            return gamma
        gamma *= 0.5
    raise RuntimeError("auto_gamma failed to find a self-consistent step size")


def auto_gammas_for(
    constants: Sequence[EpochConstants],
    r_values: Sequence[int],
    B: int,
    N: int,
    m: int,
    normC: float,
    diamX: float,
    safety: float = 0.9,
) -> list[float]:
    """Cap-compliant per-epoch step sizes for a whole run (the 0.9 * cap
    policy applied epoch by epoch with the gap recursion threaded through)."""
    gammas: list[float] = []
    a_prev = rho_prev = None
    r_prev = None
    for ell, ec in enumerate(constants):
        gamma = auto_gamma(
            ec, B, N, m, normC, diamX,
            a_prev=a_prev, rho_prev=rho_prev, r_prev=r_prev, safety=safety,
        )
        D, E = constants_DE(ec, gamma, B, N, normC)
        F, G = constants_FG(ec, B, N, m, normC, ec.lambda_eb)
        c = D / (2.0 * F + 2.0 * D)
        if ell == 0:
            a_prev = a_initial(ec, D, E, F, G, B, normC, diamX)
        else:
            a_prev = a_recursion_as_printed(
                a_prev, rho_prev, r_prev, ec, D, E, F, G, B, normC, diamX
            )
        rho_prev = 1.0 - gamma * c
        r_prev = r_values[ell]
        gammas.append(gamma)
    return gammas


def rate_and_bounds(tc: TheoryConstants, r_values: Sequence[int]):
    """Per-epoch theorem bounds (alpha, beta, delta) at the epoch's last tick.

    Raises when a step size is not strictly inside its cap, naming the
    binding term.  The beta bound uses the larger of the two first-epoch
    cap variants.
    """
    if len(r_values) != len(tc.per_epoch):
        raise ValueError("r_values length must match the epoch count")
    triples = []
    for ell, (et, r) in enumerate(zip(tc.per_epoch, r_values)):
        if not 0.0 < et.gamma < et.gamma_max.value:
            binding = min(et.gamma_max.terms, key=et.gamma_max.terms.get)
            raise ValueError(
                f"epoch {ell}: gamma={et.gamma} outside (0, gamma_max={et.gamma_max.value}); "
                f"binding term {binding!r}"
            )
        decay = et.decay(r - 1)
        b_cap = et.b if et.b_theorem1 is None else max(et.b, et.b_theorem1)
        triples.append((et.a * decay, b_cap * decay, et.d * decay))
    return triples


def asymptotic_bound(tc: TheoryConstants, r_values: Sequence[int]) -> float:
    """Infinite-horizon cap on the gap at epoch boundaries.

    Requires at least two progress windows per epoch; with a single window
    no progress is guaranteed and the geometric argument fails.  The factor
    rho_inf / (1 - rho_inf) is evaluated from the smallest gamma * c product
    so that it survives rho_inf rounding to 1.0.
    """
    bad = [ell for ell, r in enumerate(r_values) if r < 2]
    if bad:
        raise ValueError(
            f"asymptotic bound requires r >= 2 for every epoch; epochs {bad} have r < 2"
        )
    gc_min = min(et.gamma_c for et in tc.per_epoch)
    if not 0.0 < gc_min < 1.0:
        raise ValueError(f"min gamma*c = {gc_min} outside (0, 1)")
    return tc.V_inf * (1.0 - gc_min) / gc_min


def r_min(phi: float, mode: str, V: float, rho: float, T: int | None = None) -> int:
    """Minimal integer r >= 2 of progress windows per epoch achieving gap phi.

    ``asymptotic`` uses the closed form; ``finite`` scans ascending r
    against the self-referential finite-horizon inequality (whose right
    side is bounded by the asymptotic value, so the scan terminates).
    """
    if phi <= 0 or V <= 0 or not 0.0 < rho < 1.0:
        raise ValueError("need phi > 0, V > 0 and rho in (0, 1)")
    if mode == "asymptotic":
        threshold = 1.0 + math.log(phi / (V + phi)) / math.log(rho)
        return max(2, math.ceil(threshold - 1e-12))
    if mode == "finite":
        if T is None or T < 0:
            raise ValueError("finite mode requires a horizon T >= 0")
        r = 2
        while True:
            rhs = 1.0 + math.log(
                (V * rho ** ((T + 2) * (r - 1)) + phi) / (V + phi)
            ) / math.log(rho)
            if r >= rhs - 1e-12:
                return r
            r += 1
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class BoundCheckReport:
    rows: list[dict] = field(default_factory=list)
    asymptotic_rows: list[dict] = field(default_factory=list)
    asymptotic_cap: float | None = None

    @property
    def passed(self) -> bool:
        return all(r["ok"] for r in self.rows) and all(r["ok"] for r in self.asymptotic_rows)

    @property
    def worst_margin(self) -> float:
        margins = [r["margin"] for r in self.rows] + [r["margin"] for r in self.asymptotic_rows]
        return max(margins) if margins else -math.inf

    def summary(self) -> str:
        lines = []
        for r in self.rows:
            status = "ok" if r["ok"] else "VIOLATED"
            lines.append(
                f"epoch {r['epoch']:>3d} {r['quantity']:<6s} {status:<9s}"
                f" value {r['value']:.6e} bound {r['bound']:.6e} margin {r['margin']:+.3e}"
            )
        for r in self.asymptotic_rows:
            status = "ok" if r["ok"] else "VIOLATED"
            lines.append(
                f"epoch {r['epoch']:>3d} alpha-asymptotic {status:<9s}"
                f" value {r['value']:.6e} bound {r['bound']:.6e} margin {r['margin']:+.3e}"
            )
        return "\n".join(lines)


_ASYMPTOTIC_BURN_IN = 10


def check_bounds_on_trace(series, tc: TheoryConstants, r_values: Sequence[int]) -> BoundCheckReport:
    """Assert the theorem bound triples (and, for long runs, the asymptotic
    cap) against a computed metric series.

    Violations are findings: the bounds are proved, so a violation points
    at an implementation bug.  Alpha comparisons get the per-epoch oracle
    slack; beta/delta get rounding slack only.
    """
    bounds = rate_and_bounds(tc, r_values)
    report = BoundCheckReport()
    etas = series.etas
    for ell, (ab, bb, db) in enumerate(bounds):
        k_hat = etas[ell]
        eps = float(series.eps_oracle[ell])
        for quantity, value, bound, slack in (
            ("alpha", float(series.alpha[k_hat]), ab, eps),
            ("beta", float(series.beta[k_hat]), bb, 1e-12 * max(1.0, bb)),
            ("delta", float(series.delta[k_hat]), db, 1e-12 * max(1.0, db)),
        ):
            margin = value - bound
            report.rows.append(
                {
                    "epoch": ell,
                    "quantity": quantity,
                    "value": value,
                    "bound": bound,
                    "margin": margin,
                    "ok": bool(margin <= slack),
                }
            )
    if len(etas) > _ASYMPTOTIC_BURN_IN and all(r >= 2 for r in r_values):
        cap = asymptotic_bound(tc, r_values)
        report.asymptotic_cap = cap
        for ell in range(_ASYMPTOTIC_BURN_IN, len(etas)):
            value = float(series.alpha[etas[ell]])
            margin = value - cap
            report.asymptotic_rows.append(
                {
                    "epoch": ell,
                    "value": value,
                    "bound": cap,
                    "margin": margin,
                    "ok": bool(margin <= float(series.eps_oracle[ell])),
                }
            )
    return report
