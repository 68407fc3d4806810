"""Synthetic Hermitian backgrounds and their conformal calculus.

A background is the data triple (theta0, S0, potential) on a flat torus
grid: a base torsion one-form, a reference scalar curvature field, and an
accumulated conformal exponent p.  The current metric is exp(2p/n) times
the base, which fixes every derived weight:

    volume density        exp(2p)
    one-form pair weight  exp(-2p/n)
    operator weight       exp(-2p/n)
    current torsion       theta_eff = theta0 + (2(n-1)/n) dp

The weighted operator ``chern_laplacian`` scales exactly by the conformal
factor, so curvature composes under ``conformal_change`` with no correction
terms, and the degree computed from the normalized representative is a
conformal invariant of the background's class.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import grid_fields as gf
from .errors import GridMismatch
from .grid_fields import OneFormField, ScalarField, TorusGrid


@dataclass(frozen=True, eq=False)
class HermitianBackground:
    """Immutable synthetic Hermitian structure over a TorusGrid."""

    grid: TorusGrid
    theta0: OneFormField
    S0: ScalarField
    potential: ScalarField

    def __post_init__(self):
        for obj in (self.theta0, self.S0, self.potential):
            if obj.grid != self.grid:
                raise GridMismatch("background data live on different grids")

    # -- derived weights (cached; the dataclass is frozen so these are safe)

    @cached_property
    def weight(self) -> ScalarField:
        """Conformal operator weight exp(-2 p / n)."""
        return ScalarField(self.grid, np.exp(-2.0 * self.potential.values / self.grid.n))

    @cached_property
    def volume_density(self) -> ScalarField:
        return ScalarField(self.grid, np.exp(2.0 * self.potential.values))

    @cached_property
    def adjoint_weight(self) -> ScalarField:
        """exp(2 (n-1) p / n) = volume density times operator weight."""
        n = self.grid.n
        return ScalarField(self.grid, np.exp(2.0 * (n - 1) * self.potential.values / n))

    @cached_property
    def theta_eff(self) -> OneFormField:
        n = self.grid.n
        return self.theta0 + (2.0 * (n - 1) / n) * gf.gradient(self.potential)

    @cached_property
    def volume(self) -> float:
        return gf.integrate(ScalarField.constant(self.grid, 1.0), self.volume_density)

    # -- weighted integrals

    def integrate(self, f: ScalarField) -> float:
        return gf.integrate(f, self.volume_density)

    def inner(self, a: ScalarField, b: ScalarField) -> float:
        return gf.integrate(a * b, self.volume_density)

    def form_pairing(self, a: OneFormField, b: OneFormField) -> ScalarField:
        return gf.pairing(a, b, weight=self.weight)


def background(
    grid: TorusGrid,
    theta0: OneFormField | None = None,
    S0: ScalarField | float = 0.0,
    potential: ScalarField | float = 0.0,
) -> HermitianBackground:
    """Convenience constructor accepting constants for the scalar data."""
    if theta0 is None:
        theta0 = OneFormField.zero(grid)
    if not isinstance(S0, ScalarField):
        S0 = ScalarField.constant(grid, S0)
    if not isinstance(potential, ScalarField):
        potential = ScalarField.constant(grid, potential)
    return HermitianBackground(grid, theta0, S0, potential)


# ----------------------------------------------------------------------
# operators
# ----------------------------------------------------------------------


def chern_laplacian(bg: HermitianBackground, f: ScalarField) -> ScalarField:
    """Weighted drift Laplacian of the current metric.

    Returns exp(-2p/n) * (Delta f + ip(df, theta0)).  The kernel contains
    the constants, and the operator scales exactly by exp(-2u/n) under a
    conformal change by u.
    """
    if f.grid != bg.grid:
        raise GridMismatch("field lives on a different grid")
    base = gf.laplacian_flat(f) + gf.pairing(gf.gradient(f), bg.theta0)
    return bg.weight * base


def chern_adjoint(bg: HermitianBackground, f: ScalarField) -> ScalarField:
    """Adjoint of chern_laplacian in the volume-weighted inner product.

    Satisfies <chern_laplacian(a), b>_dV = <a, chern_adjoint(b)>_dV.  On the
    base (p = 0) this is Delta f - ip(df, theta0) - f * div(theta0).
    """
    if f.grid != bg.grid:
        raise GridMismatch("field lives on a different grid")
    w = bg.adjoint_weight * f
    inv_density = ScalarField(bg.grid, np.exp(-2.0 * bg.potential.values))
    return inv_density * gf.adjoint_apply(bg.theta0, w)


def solve_chern(
    bg: HermitianBackground,
    c: ScalarField | float,
    rhs: ScalarField,
    tol: float = gf.DEFAULT_LINEAR_TOL,
) -> ScalarField:
    """Solve chern_laplacian(bg, u) + c*u = rhs.

    Reduces to a flat solve: Delta u + ip(du, theta0) + (c/w) u = rhs / w
    with w the operator weight.  For c = 0 the mean-zero representative is
    returned and rhs must pair to zero against the eccentricity direction.
    """
    if not isinstance(c, ScalarField):
        c = ScalarField.constant(bg.grid, c)
    inv_w = ScalarField(bg.grid, np.exp(2.0 * bg.potential.values / bg.grid.n))
    return gf.solve_linear(bg.theta0, c * inv_w, rhs * inv_w, tol=tol)


# ----------------------------------------------------------------------
# eccentricity, normalization, degree
# ----------------------------------------------------------------------


def eccentricity(bg: HermitianBackground) -> ScalarField:
    """Positive kernel element of the adjoint, paired to the volume.

    Strictly positive, and identically 1 exactly when the current metric
    satisfies the weighted divergence-free torsion condition tested by
    ``is_gauduchon``.
    """
    k0 = gf.adjoint_null(bg.theta0)
    f0 = k0 / bg.adjoint_weight
    return f0 * (bg.volume / bg.integrate(f0))


def is_gauduchon(bg: HermitianBackground, tol: float = 1e-8) -> bool:
    """Divergence-free torsion in the volume-weighted sense.

    The test quantity is div(exp(2(n-1)p/n) * theta_eff), which reduces to
    div(theta_eff) on the base and vanishes exactly when the eccentricity
    is constant.
    """
    weighted = OneFormField(bg.grid, bg.adjoint_weight.values * bg.theta_eff.components)
    return gf.divergence(weighted).norm_inf() < tol


def is_balanced(bg: HermitianBackground, tol: float = 1e-8) -> bool:
    return bg.theta_eff.norm_inf() < tol


def conformal_change(bg: HermitianBackground, u: ScalarField | float) -> HermitianBackground:
    """New background for the metric scaled by exp(2u/n); S0 is reference data."""
    if not isinstance(u, ScalarField):
        u = ScalarField.constant(bg.grid, u)
    if u.grid != bg.grid:
        raise GridMismatch("exponent lives on a different grid")
    return HermitianBackground(bg.grid, bg.theta0, bg.S0, bg.potential + u)


def scalar_curvature(bg: HermitianBackground) -> ScalarField:
    """Curvature of the current metric from the conformal composition law."""
    p = bg.potential
    base = gf.laplacian_flat(p) + gf.pairing(gf.gradient(p), bg.theta0) + bg.S0
    return bg.weight * base


def gauduchon_normalize(bg: HermitianBackground) -> tuple[HermitianBackground, ScalarField]:
    """Volume-1 divergence-free-torsion representative of the conformal class.

    The conformal exponent is computed in closed form from the eccentricity,
    u = (n / (2(n-1))) * log f0, plus the constant that fixes unit volume;
    afterwards the eccentricity of the result is constant 1.  Returns the
    new background and the total exponent applied.
    """
    n = bg.grid.n
    f0 = eccentricity(bg)
    u_g = ScalarField(bg.grid, (n / (2.0 * (n - 1))) * np.log(f0.values))
    bg1 = conformal_change(bg, u_g)
    kappa = -0.5 * float(np.log(bg1.volume))
    u_total = u_g + kappa
    return conformal_change(bg, u_total), u_total


def gauduchon_degree(bg: HermitianBackground) -> float:
    """Total curvature of the volume-1 normalized representative.

    Conformally invariant: every member of the class normalizes onto the
    same representative.
    """
    norm, _ = gauduchon_normalize(bg)
    return norm.integrate(scalar_curvature(norm))


# ----------------------------------------------------------------------
# residuals
# ----------------------------------------------------------------------


def formula4_residual(bg: HermitianBackground, u: ScalarField) -> float:
    """Sup-norm defect of the conformal divergence identity.

    With w = exp(-2u/n) the exact identity is
        w * L u + (n/2) * L w + (n/2) * ip_w(dw, dw) / w = 0,
    where L is the background operator and ip_w the weighted pairing.
    Vanishes to spectral accuracy for resolved u.
    """
    n = bg.grid.n
    w = ScalarField(bg.grid, np.exp(-2.0 * u.values / n))
    t1 = w * chern_laplacian(bg, u)
    t2 = (n / 2.0) * chern_laplacian(bg, w)
    t3 = (n / 2.0) * (bg.form_pairing(gf.gradient(w), gf.gradient(w)) / w)
    return (t1 + t2 + t3).norm_inf()


def prescribed_residual(bg: HermitianBackground, g: ScalarField, u: ScalarField) -> float:
    """Sup-norm distance of the curvature after changing by u from the target g."""
    return (scalar_curvature(conformal_change(bg, u)) - g).norm_inf()


def integral_identity_gap(bg: HermitianBackground, g: ScalarField, u: ScalarField) -> float:
    """Relative defect of the degree identity on the normalized representative.

    For a solution u of the prescribed-curvature equation on bg, the target
    times the solved volume form integrates to the degree over the
    normalized representative.  Returns |integral - degree| / max(1, |degree|).
    """
    norm, u_norm = gauduchon_normalize(bg)
    u_rel = bg.potential + u - norm.potential
    n = bg.grid.n
    weighted = g * ScalarField(norm.grid, np.exp(2.0 * u_rel.values / n))
    total = norm.integrate(weighted)
    gamma = norm.integrate(scalar_curvature(norm))
    return abs(total - gamma) / max(1.0, abs(gamma))
