"""Solvers for the negative-degree regime.

Two independent routes to the prescribed-curvature equation

    L u + S = g exp(2u/n)

on a constant-curvature background (S = gamma < 0):

  * a continuity path in t from the trivially solvable problem to the
    target, with a damped Newton corrector at each node and step halving
    on failure;
  * monotone iteration between an ordered subsolution/supersolution pair,
    with the screened linear operator L + K chosen so each sweep preserves
    the ordering.

``yamabe_normalize`` turns any negative-degree background into its
constant-curvature representative by running the continuity path on the
normalized representative with the constant target.  ``solve_nonpositive``
chains normalization, the closed-form subsolution, the constructed
supersolution and the monotone sweep for any non-positive non-zero target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid_fields as gf
from . import hermitian as hm
from .errors import (
    JacobianSingular,
    MaxIters,
    NewtonDiverged,
    NoConvergence,
    NoNegativePart,
    OrderingViolated,
    WrongRegime,
    WrongSignClass,
)
from .grid_fields import ScalarField
from .hermitian import HermitianBackground


@dataclass(frozen=True)
class SolveOptions:
    """Knobs shared by the continuity and monotone paths."""

    t_steps: int = 8
    newton_max: int = 30
    newton_tol: float = 1e-9
    monotone_max: int = 400
    monotone_tol: float = 1e-8
    K_safety: float = 1.1

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if self.newton_tol <= 0 or self.monotone_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.K_safety <= 1.0:
            raise ValueError("K_safety must exceed 1")


class _NewtonStepFailed(Exception):
    pass


def _weighted_residual(bg, value_field: ScalarField, u: ScalarField) -> float:
    """Sup norm of exp(-2u/n) * value; equals the curvature defect at t=1."""
    n = bg.grid.n
    return float(np.abs(np.exp(-2.0 * u.values / n) * value_field.values).max())


def _newton_at(
    bg: HermitianBackground,
    s_field: ScalarField,
    g: ScalarField,
    t: float,
    u: ScalarField,
    opts: SolveOptions,
) -> ScalarField:
    """Damped Newton for the homotopy residual at fixed t.

    G_t(u) = L u + t*S - g exp(2u/n) + (1-t)*g.  Convergence is measured on
    the conformally weighted residual so the t=1 criterion matches the
    prescribed-curvature defect.
    """
    n = bg.grid.n
    target = 0.5 * opts.newton_tol

    def residual(v: ScalarField) -> ScalarField:
        expv = ScalarField(bg.grid, np.exp(2.0 * v.values / n))
        return hm.chern_laplacian(bg, v) + t * s_field - g * expv + (1.0 - t) * g

    res = residual(u)
    res0_norm = res.norm_l2()
    for _ in range(opts.newton_max):
        if _weighted_residual(bg, res, u) < target:
            return u
        if res.norm_l2() > 1e4 * max(res0_norm, 1.0):
            raise _NewtonStepFailed  # residual exploded; no point iterating on
        coeff = ScalarField(bg.grid, -(2.0 / n) * g.values * np.exp(2.0 * u.values / n))
        try:
            delta = hm.solve_chern(bg, coeff, -res, tol=1e-10)
        except NoConvergence as exc:
            if coeff.min() <= 0.0:
                raise JacobianSingular(
                    f"linearization lost definiteness at t={t:.4f}", t=t
                ) from exc
            raise _NewtonStepFailed from exc
        res_norm = res.norm_l2()
        step = 1.0
        for _ in range(9):
            u_try = u + step * delta
            if np.abs(u_try.values).max() < 50.0:
                res_try = residual(u_try)
                if np.isfinite(res_try.values).all() and res_try.norm_l2() < res_norm * (1.0 - 1e-4 * step):
                    u, res = u_try, res_try
                    break
            step *= 0.5
        else:
            raise _NewtonStepFailed
    if _weighted_residual(bg, res, u) < target:
        return u
    raise _NewtonStepFailed


def continuity_solve(
    bg_const: HermitianBackground,
    g: ScalarField,
    opts: SolveOptions | None = None,
    u0: ScalarField | None = None,
    callback=None,
) -> ScalarField:
    """March the homotopy from the trivial problem at t=0 to the target at t=1.

    Guaranteed for strictly negative g on a constant-curvature background;
    sign-changing g is accepted as an exploratory run and may raise
    NewtonDiverged, which signals leaving the guaranteed regime, not a
    proven obstruction.  The returned exponent satisfies
    prescribed_residual < opts.newton_tol, and for strictly negative g the
    sup-bound from the homotopy estimate is asserted.
    """
    opts = opts or SolveOptions()
    s_field = hm.scalar_curvature(bg_const)
    u = u0 if u0 is not None else ScalarField.zeros(bg_const.grid)
    if u0 is not None:
        # Polish the supplied guess onto the t=0 solution before marching.
        try:
            u = _newton_at(bg_const, s_field, g, 0.0, u, opts)
        except _NewtonStepFailed as exc:
            raise NewtonDiverged("initial guess is outside the t=0 basin", t=0.0) from exc

    t = 0.0
    dt = 1.0 / opts.t_steps
    halvings = 0
    while t < 1.0 - 1e-14:
        t_next = min(1.0, t + dt)
        try:
            u_next = _newton_at(bg_const, s_field, g, t_next, u, opts)
        except _NewtonStepFailed as exc:
            halvings += 1
            if halvings > 3:
                raise NewtonDiverged(
                    f"continuity path stalled at t={t_next:.4f}", t=t_next
                ) from exc
            dt *= 0.5
            continue
        u, t = u_next, t_next
        if callback is not None:
            callback(u)

    res = hm.prescribed_residual(bg_const, g, u)
    if res >= opts.newton_tol:
        raise NewtonDiverged(f"final residual {res:.3e} above tolerance", t=1.0)
    if g.max() < 0.0:
        check_sup_bound(bg_const, g, u)
    return u


def check_sup_bound(bg_const: HermitianBackground, g: ScalarField, u: ScalarField) -> float:
    """A priori bound exp(2 max u / n) <= (-min S - min g) / (-max g) for g < 0."""
    if g.max() >= 0.0:
        raise WrongSignClass("sup bound only applies to strictly negative g")
    s_field = hm.scalar_curvature(bg_const)
    bound = (-s_field.min() - g.min()) / (-g.max())
    value = float(np.exp(2.0 * u.max() / bg_const.grid.n))
    if value > bound * (1.0 + 1e-8):
        raise WrongRegime(f"sup bound violated: exp(2 max u/n)={value:.6e} > {bound:.6e}")
    return bound


def yamabe_normalize(
    bg: HermitianBackground,
    opts: SolveOptions | None = None,
    u0: ScalarField | None = None,
) -> tuple[HermitianBackground, ScalarField]:
    """Constant-curvature representative for a negative-degree background.

    Normalizes to the volume-1 representative and runs the continuity path
    with the constant target equal to the degree.  Returns the new
    background and the total exponent relative to the input.
    """
    opts = opts or SolveOptions()
    gamma = hm.gauduchon_degree(bg)
    if gamma >= 0.0:
        raise WrongRegime(f"degree {gamma:.3e} is not negative")
    norm, u_norm = hm.gauduchon_normalize(bg)
    target = ScalarField.constant(bg.grid, gamma)
    u_flow = continuity_solve(norm, target, opts, u0=u0)
    bg_const = hm.conformal_change(norm, u_flow)
    defect = (hm.scalar_curvature(bg_const) - gamma).norm_inf()
    if defect >= 1e-7:
        raise NewtonDiverged(f"constant-curvature defect {defect:.3e} above 1e-7")
    return bg_const, u_norm + u_flow


def build_subsolution(bg_const: HermitianBackground, g: ScalarField) -> float:
    """Constant subsolution (n/2) log(gamma / min g); needs min g < 0."""
    s_field = hm.scalar_curvature(bg_const)
    gamma = bg_const.integrate(s_field) / bg_const.volume
    if gamma >= 0.0:
        raise WrongRegime(f"curvature level {gamma:.3e} is not negative")
    gmin = g.min()
    if gmin >= 0.0:
        raise NoNegativePart("g has no negative part")
    value = (bg_const.grid.n / 2.0) * float(np.log(gamma / gmin))
    # Constant candidate: defect reduces to gamma - g * (gamma / min g) <= 0.
    defect = s_field - g * (gamma / gmin)
    if defect.max() > 1e-9 * max(1.0, abs(gamma)):
        raise OrderingViolated(f"subsolution inequality failed by {defect.max():.3e}")
    return value


def build_supersolution(bg_const: HermitianBackground, g: ScalarField) -> ScalarField:
    """Supersolution k1*phi + k2 for non-positive, non-zero g.

    phi solves L phi = g - mean, k1 sits 1% above volume*gamma / weighted
    mean, and k2 sits just above max((n/2) log k1 - k1 phi).  The defect is
    verified pointwise before returning.
    """
    gamma = hm.scalar_curvature(bg_const)
    gamma_level = bg_const.integrate(gamma) / bg_const.volume
    if gamma_level >= 0.0:
        raise WrongRegime(f"curvature level {gamma_level:.3e} is not negative")
    if g.max() > 0.0 or g.norm_inf() < 1e-14:
        raise WrongSignClass("supersolution construction needs g <= 0, g not identically 0")
    n = bg_const.grid.n
    f0 = hm.eccentricity(bg_const)
    star = bg_const.integrate(g * f0)
    mean = star / bg_const.volume
    phi = hm.solve_chern(bg_const, 0.0, g - mean)
    k1 = 1.01 * (bg_const.volume * gamma_level / star)
    k2_bound = float(((n / 2.0) * np.log(k1) - k1 * phi.values).max())
    k2 = k2_bound + 0.01 * (1.0 + abs(k2_bound))
    u_plus = k1 * phi + k2
    defect = (
        hm.chern_laplacian(bg_const, u_plus)
        + gamma
        - g * ScalarField(bg_const.grid, np.exp(2.0 * u_plus.values / n))
    )
    if defect.min() < -1e-9 * max(1.0, abs(gamma_level)):
        raise OrderingViolated(f"supersolution inequality failed by {defect.min():.3e}")
    return u_plus


def _check_ordered_pair(
    bg: HermitianBackground,
    g: ScalarField,
    u_minus: ScalarField,
    u_plus: ScalarField,
    tol: float = 1e-9,
):
    n = bg.grid.n
    s_field = hm.scalar_curvature(bg)
    if (u_plus - u_minus).min() < -1e-12:
        raise OrderingViolated("subsolution exceeds supersolution somewhere")
    for name, u, sign in (("subsolution", u_minus, 1.0), ("supersolution", u_plus, -1.0)):
        defect = (
            hm.chern_laplacian(bg, u)
            + s_field
            - g * ScalarField(bg.grid, np.exp(2.0 * u.values / n))
        )
        if (sign * defect.values).max() > tol:
            raise OrderingViolated(f"{name} inequality fails by {(sign * defect.values).max():.3e}")


def monotone_solve(
    bg_const: HermitianBackground,
    g: ScalarField,
    u_minus: ScalarField | float,
    u_plus: ScalarField,
    opts: SolveOptions | None = None,
    u_start: ScalarField | None = None,
    callback=None,
) -> ScalarField:
    """Screened fixed-point sweep between an ordered sub/supersolution pair.

    Each step solves (L + K) u_k = g exp(2 u_{k-1}/n) - S + K u_{k-1} with
    K large enough that the update is order-preserving.  Started from the
    subsolution the iterates increase monotonically (asserted to -1e-10);
    an explicit u_start inside the interval is allowed for uniqueness
    probes, in which case only the bracket is asserted.
    """
    opts = opts or SolveOptions()
    grid = bg_const.grid
    n = grid.n
    if not isinstance(u_minus, ScalarField):
        u_minus = ScalarField.constant(grid, u_minus)
    _check_ordered_pair(bg_const, g, u_minus, u_plus)
    s_field = hm.scalar_curvature(bg_const)

    K = opts.K_safety * (2.0 / n) * g.norm_inf() * float(np.exp(2.0 * u_plus.max() / n))
    if K <= 0.0:
        raise WrongSignClass("screening constant collapsed; g vanishes identically")

    from_sub = u_start is None
    u = u_minus if from_sub else u_start
    if not from_sub and ((u - u_minus).min() < -1e-12 or (u_plus - u).min() < -1e-12):
        raise OrderingViolated("start point outside the ordered interval")

    for iteration in range(1, opts.monotone_max + 1):
        rhs = g * ScalarField(grid, np.exp(2.0 * u.values / n)) - s_field + K * u
        u_next = hm.solve_chern(bg_const, K, rhs, tol=1e-10)
        if from_sub and (u_next - u).min() < -1e-10:
            raise NoConvergence(
                f"monotone trace violated at step {iteration}: {(u_next - u).min():.3e}"
            )
        if (u_plus - u_next).min() < -1e-10 or (u_next - u_minus).min() < -1e-10:
            raise NoConvergence(f"iterate left the ordered interval at step {iteration}")
        u = u_next
        if callback is not None:
            callback(u)
        if hm.prescribed_residual(bg_const, g, u) < opts.monotone_tol:
            return u
    raise MaxIters(f"monotone sweep did not converge in {opts.monotone_max} steps")


def solve_nonpositive(
    bg: HermitianBackground,
    g: ScalarField,
    opts: SolveOptions | None = None,
    callback=None,
) -> ScalarField:
    """End-to-end solve for non-positive, non-zero g on a negative-degree class.

    Chains constant-curvature normalization, the constructed supersolution,
    the closed-form subsolution (lowered under the supersolution if needed)
    and the monotone sweep.  Returns the total exponent relative to the
    input background, with curvature defect below 1e-6.
    """
    opts = opts or SolveOptions()
    if g.max() > 0.0 or g.norm_inf() < 1e-14:
        raise WrongSignClass("this path needs g <= 0 and g not identically 0")
    bg_const, u_base = yamabe_normalize(bg, opts)
    u_plus = build_supersolution(bg_const, g)
    level = min(build_subsolution(bg_const, g), u_plus.min())
    u_minus = ScalarField.constant(bg.grid, level)
    u_mon = monotone_solve(bg_const, g, u_minus, u_plus, opts, callback=callback)
    u_total = u_base + u_mon
    res = hm.prescribed_residual(bg, g, u_total)
    if res >= 1e-6:
        raise NoConvergence(f"composed residual {res:.3e} above 1e-6", res)
    return u_total
