"""Necessary-condition checkers and the counterexample generator.

All operations here expect a constant-curvature normalized background with
negative level: the curvature of the current metric must be a negative
constant gamma.  The ladder of tests, from weak to strong:

  * the weighted mean of g against the eccentricity must be negative;
  * the unique solution of the screened linear problem
        L psi - (2/n) gamma psi = -(2/n) g
    must be strictly positive.

The generator inverts the second test: starting from any non-constant seed
it produces a target g that passes the mean test while its screened
solution changes sign, certifying that no conformal factor realizes g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid_fields as gf
from . import hermitian as hm
from .errors import ConstantInput, StarViolated, WrongRegime
from .grid_fields import ScalarField
from .hermitian import HermitianBackground

CONSTANT_CURVATURE_TOL = 1e-6
STAR_TOL = 1e-12  # guards the strict-negativity test against grid quadrature noise


@dataclass(frozen=True)
class ObstructionReport:
    """Outcome of the necessary-condition ladder for one target g."""

    gamma: float
    star_value: float
    star_pass: bool
    psi_min: float
    psi_pass: bool
    c_upper: float | None
    verdict: str  # NotRealizable | Unknown | TriviallyRealizable

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "star_value": self.star_value,
            "star_pass": self.star_pass,
            "psi_min": self.psi_min,
            "psi_pass": self.psi_pass,
            "c_upper": self.c_upper,
            "verdict": self.verdict,
        }


def constant_negative_level(bg: HermitianBackground, tol: float = CONSTANT_CURVATURE_TOL) -> float:
    """Return gamma for a constant-curvature background, else WrongRegime."""
    s = hm.scalar_curvature(bg)
    gamma = bg.integrate(s) / bg.volume
    if (s - gamma).norm_inf() > tol * max(1.0, abs(gamma)):
        raise WrongRegime("background curvature is not constant")
    if gamma >= -tol:
        raise WrongRegime(f"constant curvature level {gamma:.3e} is not negative")
    return gamma


def check_star(bg_const: HermitianBackground, g: ScalarField) -> tuple[float, bool]:
    """Weighted mean of g against the eccentricity; negative is necessary.

    The pass verdict requires the value to clear a small margin below zero
    so that exactly-balanced targets are not accepted on rounding noise.
    """
    constant_negative_level(bg_const)
    f0 = hm.eccentricity(bg_const)
    value = bg_const.integrate(g * f0)
    return value, value < -STAR_TOL


def positivity_test(
    bg_const: HermitianBackground, g: ScalarField
) -> tuple[ScalarField, float, bool]:
    """Solve the screened problem for psi; min psi <= 0 certifies non-realizability."""
    gamma = constant_negative_level(bg_const)
    n = bg_const.grid.n
    psi = hm.solve_chern(bg_const, -(2.0 / n) * gamma, (-2.0 / n) * g)
    psi_min = psi.min()
    return psi, psi_min, psi_min > 0.0


def c_upper_bound(bg_const: HermitianBackground, g: ScalarField) -> float:
    """Upper bound for the largest constant level solvable with target g.

    Computes m as the volume-average of g against the eccentricity, solves
    L phi = (2/n)(-g + m) for the mean-zero phi, shifts it positive with
    a = max(-(n/m) ip_w(dphi, dphi) - phi), and returns m / (2 min(phi+a)).
    Constant-like g (phi constant) yields -inf.
    """
    constant_negative_level(bg_const)
    n = bg_const.grid.n
    f0 = hm.eccentricity(bg_const)
    star = bg_const.integrate(g * f0)
    if star >= -STAR_TOL:
        raise StarViolated(f"weighted mean of g is {star:.3e}, not negative")
    m = star / bg_const.volume
    phi = hm.solve_chern(bg_const, 0.0, (2.0 / n) * (ScalarField.constant(bg_const.grid, m) - g))
    if phi.norm_inf() < 1e-12:
        return float("-inf")
    dphi = gf.gradient(phi)
    ip_phi = bg_const.form_pairing(dphi, dphi)
    a = float((-(n / m) * ip_phi - phi).max())
    denom = (phi + a).min()
    if denom <= 1e-12:
        return float("-inf")
    return m / (2.0 * denom)


def make_counterexample(
    bg_const: HermitianBackground, psi_prime: ScalarField
) -> tuple[ScalarField, ScalarField]:
    """Target passing the mean test that no conformal factor can realize.

    Shifts the seed to zero weighted mean, picks a = -min(psi)/2 so that
    psi + a changes sign, and returns
        g = (n/2) (-L psi + (2/n) gamma (psi + a))
    together with the certificate psi + a, which solves the screened
    problem for this g by construction.
    """
    gamma = constant_negative_level(bg_const)
    if (psi_prime - psi_prime.mean()).norm_inf() < 1e-10:
        raise ConstantInput("seed field must be non-constant")
    n = bg_const.grid.n
    f0 = hm.eccentricity(bg_const)
    k = -bg_const.integrate(psi_prime * f0) / bg_const.volume
    psi = psi_prime + k
    a = -0.5 * psi.min()
    g = (n / 2.0) * (-hm.chern_laplacian(bg_const, psi) + (2.0 / n) * gamma * (psi + a))

    star = bg_const.integrate(g * f0)
    expected = gamma * a * bg_const.volume
    if abs(star - expected) > 1e-9 * max(1.0, abs(expected)) or star >= 0.0:
        raise WrongRegime(f"generator self-check failed: star {star:.3e} vs {expected:.3e}")
    certificate = psi + a
    screened = (
        hm.chern_laplacian(bg_const, certificate)
        - (2.0 / n) * gamma * certificate
        + (2.0 / n) * g
    )
    if screened.norm_inf() > 1e-9 * max(1.0, g.norm_inf()):
        raise WrongRegime("generator self-check failed: certificate does not solve")
    return g, certificate


def scaling_transport(u: ScalarField, lam: float, n: int) -> ScalarField:
    """Exponent solving for lam*g given the exponent solving for g."""
    if lam <= 0.0:
        raise ValueError(f"scaling factor must be positive, got {lam}")
    return u - (n / 2.0) * float(np.log(lam))


def obstruction_ladder(bg_const: HermitianBackground, g: ScalarField) -> ObstructionReport:
    """Run the full ladder and classify g."""
    gamma = constant_negative_level(bg_const)
    star_value, star_pass = check_star(bg_const, g)
    _, psi_min, psi_pass = positivity_test(bg_const, g)
    c_upper = c_upper_bound(bg_const, g) if star_pass else None
    if not star_pass or not psi_pass:
        verdict = "NotRealizable"
    elif g.max() <= 0.0 and g.norm_inf() > 0.0:
        verdict = "TriviallyRealizable"
    else:
        verdict = "Unknown"
    return ObstructionReport(gamma, star_value, star_pass, psi_min, psi_pass, c_upper, verdict)
