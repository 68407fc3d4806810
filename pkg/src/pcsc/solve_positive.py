"""Small-data local solver for the positive-degree regime.

On the volume-1 normalized representative with positive degree, the
prescribed-curvature equation is solved near the trivial point by a
bordered Newton method.  The unknown splits into a mean-zero field and a
scalar shift; the equations are the mean-zero projection of the field
equation plus the scalar compatibility integral

    integral (S - g exp(2u/n)) dV = 0,

which pins the shift.  Divergence is expected (and reported, not treated
as a bug) once the data leave the small neighbourhood where the implicit
solution branch exists.  ``neighborhood_probe`` measures an empirical
radius for that neighbourhood by a geometric sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import grid_fields as gf
from . import hermitian as hm
from .errors import NewtonDiverged, WrongRegime
from .grid_fields import ScalarField
from .hermitian import HermitianBackground


@dataclass(frozen=True)
class LocalSolveOptions:
    newton_max: int = 30
    tol: float = 1e-11
    blowup: float = 1e6


def _require_positive_representative(bg: HermitianBackground) -> float:
    if abs(bg.volume - 1.0) > 1e-8:
        raise WrongRegime(f"background volume {bg.volume:.6f} != 1")
    if not hm.is_gauduchon(bg, 1e-6):
        raise WrongRegime("background is not a normalized representative")
    gamma = bg.integrate(hm.scalar_curvature(bg))
    if gamma <= 0.0:
        raise WrongRegime(f"degree {gamma:.3e} is not positive")
    return gamma


def local_solve(
    bg_gauduchon: HermitianBackground,
    g: ScalarField,
    opts: LocalSolveOptions | None = None,
    S: ScalarField | None = None,
    callback=None,
) -> ScalarField:
    """Bordered Newton around u = 0 for small data.

    S defaults to the background curvature, in which case the returned
    exponent satisfies the prescribed-curvature contract; overriding S
    probes the two-parameter neighbourhood instead.  Raises NewtonDiverged
    outside the locality basin; that is the expected report for large data.
    """
    opts = opts or LocalSolveOptions()
    _require_positive_representative(bg_gauduchon)
    bg = bg_gauduchon
    grid = bg.grid
    n = grid.n
    m = grid.size
    if S is None:
        S = hm.scalar_curvature(bg)
    if g.norm_inf() < 1e-14 and S.norm_inf() < 1e-14:
        return ScalarField.zeros(grid)
    if g.max() <= 0.0:
        raise WrongRegime("target must be positive somewhere")

    dvol = bg.volume_density.values / m  # quadrature weights, total mass 1
    precond = gf._precond_apply(grid, 1.0)

    def full_residual(u_vals: np.ndarray) -> np.ndarray:
        u_field = ScalarField(grid, u_vals)
        return (
            hm.chern_laplacian(bg, u_field).values
            + S.values
            - g.values * np.exp(2.0 * u_vals / n)
        )

    u = np.zeros(grid.shape)
    prev_norm = np.inf
    grew = 0
    for iteration in range(opts.newton_max):
        res = full_residual(u)
        r1 = res - (res * dvol).sum()  # mean-zero projection of the field equation
        r2 = float(((S.values - g.values * np.exp(2.0 * u / n)) * dvol).sum())
        norm = float(np.sqrt((r1**2 * dvol).sum()) + abs(r2))
        if not np.isfinite(norm) or norm > opts.blowup:
            raise NewtonDiverged(f"residual blew up at iteration {iteration}")
        if norm < opts.tol:
            return ScalarField(grid, u)
        if norm > prev_norm * (1.0 - 1e-12):
            grew += 1
            if grew >= 3:
                raise NewtonDiverged(
                    f"residual stagnated at {norm:.3e} after {iteration} iterations"
                )
        else:
            grew = 0
        prev_norm = norm

        w = g.values * np.exp(2.0 * u / n)

        def matvec(z):
            dw_vals = z[:m].reshape(grid.shape)
            dc = z[m]
            du = dw_vals + dc
            top = (
                hm.chern_laplacian(bg, ScalarField(grid, dw_vals)).values
                - (2.0 / n) * w * du
            )
            top = top - (top * dvol).sum() + dw_vals.mean()  # mean pin keeps block square
            row2 = -(2.0 / n) * float((w * du * dvol).sum())
            return np.concatenate([top.ravel(), [row2]])

        def pre(z):
            return np.concatenate([precond(z[:m].reshape(grid.shape)).ravel(), z[m:]])

        rhs = -np.concatenate([r1.ravel(), [r2]])
        aop = spla.LinearOperator((m + 1, m + 1), matvec=matvec)
        mop = spla.LinearOperator((m + 1, m + 1), matvec=pre)
        z, _ = spla.lgmres(aop, rhs, M=mop, rtol=1e-12, atol=0.0, maxiter=60, inner_m=30)
        if not np.isfinite(z).all():
            raise NewtonDiverged(f"linear update lost finiteness at iteration {iteration}")
        dw = z[:m].reshape(grid.shape)
        dw = dw - dw.mean()
        u = u + dw + z[m]
        if np.abs(u).max() > 60.0:
            raise NewtonDiverged(f"iterate left the locality region at iteration {iteration}")
        if callback is not None:
            callback(ScalarField(grid, u))
    raise NewtonDiverged(f"no convergence in {opts.newton_max} iterations")


def neighborhood_probe(
    bg_gauduchon: HermitianBackground,
    g_dir: ScalarField,
    S_dir: ScalarField,
    opts: LocalSolveOptions | None = None,
    j_max: int = 14,
) -> float:
    """Largest scale in the geometric sweep {2^-j} where the local solve converges.

    An empirical lower bound for the locality radius; returns 0.0 when no
    scale in the sweep converges.
    """
    _require_positive_representative(bg_gauduchon)
    if g_dir.max() <= 0.0:
        raise WrongRegime("probe direction must be positive somewhere")
    for j in range(j_max + 1):
        eps = 2.0**-j
        try:
            local_solve(bg_gauduchon, eps * g_dir, opts, S=eps * S_dir)
        except NewtonDiverged:
            continue
        return eps
    return 0.0
