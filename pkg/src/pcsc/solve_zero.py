"""Constrained variational solver for the zero-degree balanced regime.

On a balanced background with vanishing curvature, a sign-changing target
with negative weighted mean is realized by minimizing the Dirichlet energy

    F(v) = 1/2 integral ip_w(dv, dv) dV

over mean-zero fields satisfying the nonlinear constraint

    integral g exp(2v/n) dV = 0.

The minimizer satisfies L v = mu * g exp(2v/n) for a positive multiplier
mu, and shifting by gamma = (n/2) log(mu) turns v into a solution of the
prescribed-curvature equation.  The search runs projected gradient descent
with a fixed restoration direction (a smooth bump at the maximum of g) and
hands off to a bordered Newton solve on the stationarity system once the
projected gradient is small.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import grid_fields as gf
from . import hermitian as hm
from .errors import (
    BisectionFailed,
    LineSearchFailed,
    MaxIters,
    NonNegativeMultiplier,
    WrongRegime,
)
from .grid_fields import ScalarField
from .hermitian import HermitianBackground


@dataclass(frozen=True)
class VariationalOptions:
    max_iters: int = 2000
    newton_max: int = 40
    constraint_tol: float = 1e-10
    stationarity_tol: float = 1e-7
    handoff: float = 1e-3
    tau_init: float = 1.0
    armijo: float = 1e-4
    precond_shift: float = 4.0 * np.pi**2  # smallest nonzero Laplacian eigenvalue

    def __post_init__(self):
        if self.constraint_tol <= 0 or self.stationarity_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class VariationalState:
    """Terminal state of the constrained minimization."""

    v: ScalarField
    lam: float  # multiplier recovered from the descent direction test
    gamma: float  # additive shift (n/2) log(-2 lam / n)
    energy: float
    constraint_residual: float
    mean_multiplier: float
    stationarity: float
    iterations: int
    energy_trace: tuple[float, ...] = field(repr=False, default=())


def check_hypotheses(bg: HermitianBackground, g: ScalarField) -> bool:
    """True iff g changes sign and has negative mean on the balanced background."""
    if not hm.is_balanced(bg, 1e-8) or hm.scalar_curvature(bg).norm_inf() >= 1e-8:
        raise WrongRegime("background must be balanced with vanishing curvature")
    return g.min() < 0.0 < g.max() and bg.integrate(g) < -1e-12


def restoration_bump(bg: HermitianBackground, g: ScalarField) -> ScalarField:
    """Smooth resolved bump centered at the maximum of g, values in [0, 1]."""
    grid = bg.grid
    center = np.unravel_index(int(np.argmax(g.values)), grid.shape)
    coords = grid.meshgrid()
    bump = np.ones(grid.shape)
    for ax in range(grid.d):
        x0 = center[ax] / grid.N
        bump *= (0.5 * (1.0 + np.cos(2.0 * np.pi * (coords[ax] - x0)))) ** 2
    return ScalarField(grid, bump)


def _constraint(bg: HermitianBackground, g: ScalarField, v: ScalarField) -> float:
    n = bg.grid.n
    return bg.integrate(g * ScalarField(bg.grid, np.exp(2.0 * v.values / n)))


def initial_feasible(bg: HermitianBackground, g: ScalarField) -> ScalarField:
    """Mean-zero field on the constraint surface, built by bisection.

    Scales the restoration bump until the constraint integral changes sign
    (it tends to +inf with the scale because g is positive at the bump
    center), bisects the scale to a root, and removes the mean, which only
    multiplies the constraint integral by a positive factor.
    """
    if not check_hypotheses(bg, g):
        raise WrongRegime("target violates the sign/mean hypotheses")
    chi = restoration_bump(bg, g)

    def value(s: float) -> float:
        return _constraint(bg, g, s * chi)

    lo, f_lo = 0.0, value(0.0)
    if f_lo >= 0.0:
        raise BisectionFailed("constraint integral is not negative at zero scale")
    hi = 1.0
    while value(hi) <= 0.0:
        hi *= 2.0
        if hi > 64.0:
            raise BisectionFailed("no bracket found for the feasibility scale up to 64")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = value(mid)
        if abs(f_mid) < 1e-12:
            lo = hi = mid
            break
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    phi = s * chi
    phi0 = phi - bg.integrate(phi) / bg.volume
    return phi0


def _restore(bg, g, v: ScalarField, chi: ScalarField, tol: float) -> ScalarField | None:
    """Secant solve for the bump coefficient returning v + s*chi to the surface."""
    s_prev, f_prev = 0.0, _constraint(bg, g, v)
    if abs(f_prev) < tol:
        return v
    s_cur = 1e-4 if f_prev < 0 else -1e-4
    f_cur = _constraint(bg, g, v + s_cur * chi)
    for _ in range(60):
        if abs(f_cur) < tol:
            restored = v + s_cur * chi
            return restored - bg.integrate(restored) / bg.volume
        denom = f_cur - f_prev
        if denom == 0.0:
            return None
        s_next = s_cur - f_cur * (s_cur - s_prev) / denom
        if not np.isfinite(s_next) or abs(s_next) > 4.0:
            return None
        s_prev, f_prev = s_cur, f_cur
        s_cur = s_next
        f_cur = _constraint(bg, g, v + s_cur * chi)
    return None


def _multipliers(bg, r: ScalarField, a1: ScalarField):
    """Least-squares coefficients of r against (a1, 1) in the weighted inner product."""
    g11 = bg.inner(a1, a1)
    g12 = bg.integrate(a1)
    g22 = bg.volume
    b1 = bg.inner(r, a1)
    b2 = bg.integrate(r)
    det = g11 * g22 - g12 * g12
    if det <= 0.0:
        return 0.0, 0.0
    mu = (b1 * g22 - b2 * g12) / det
    c = (g11 * b2 - g12 * b1) / det
    return mu, c


def _newton_polish(bg, g, v: ScalarField, mu: float, opts: VariationalOptions):
    """Bordered Newton on (v, mu, c) for the stationarity system.

    Unknowns are the full field plus the two scalar multipliers; the mean
    constraint keeps the field block invertible.  Iterates until the field
    equation, the constraint and the mean are tight.
    """
    grid = bg.grid
    n = grid.n
    m = grid.size
    dvol = bg.volume_density.values / m  # quadrature weights of integral(. dV)
    c = 0.0

    def residuals(vv: ScalarField, mu_s: float, c_s: float):
        expv = np.exp(2.0 * vv.values / n)
        r1 = hm.chern_laplacian(bg, vv).values - mu_s * g.values * expv - c_s
        r2 = float((g.values * expv * dvol).sum())
        r3 = float((vv.values * dvol).sum())
        return r1, r2, r3, expv

    for iteration in range(opts.newton_max):
        r1, r2, r3, expv = residuals(v, mu, c)
        field_norm = float(np.sqrt((r1**2 * dvol).sum()))
        if field_norm < 0.2 * opts.stationarity_tol and abs(r2) < 0.2 * opts.constraint_tol \
                and abs(r3) < 0.2 * opts.constraint_tol:
            return v, mu, c, iteration
        w = g.values * expv
        jac_vv_extra = -mu * (2.0 / n) * w  # zeroth-order term of the field block

        def matvec(z):
            dv = z[:m].reshape(grid.shape)
            dmu, dc = z[m], z[m + 1]
            top = (
                hm.chern_laplacian(bg, ScalarField(grid, dv)).values
                + jac_vv_extra * dv
                - dmu * w
                - dc
            )
            row2 = (2.0 / n) * float((w * dv * dvol).sum())
            row3 = float((dv * dvol).sum())
            return np.concatenate([top.ravel(), [row2, row3]])

        rhs = -np.concatenate([r1.ravel(), [r2, r3]])
        precond = gf._precond_apply(grid, 1.0)

        def pre(z):
            return np.concatenate([precond(z[:m].reshape(grid.shape)).ravel(), z[m:]])

        aop = spla.LinearOperator((m + 2, m + 2), matvec=matvec)
        mop = spla.LinearOperator((m + 2, m + 2), matvec=pre)
        z, _ = spla.lgmres(aop, rhs, M=mop, rtol=1e-12, atol=0.0, maxiter=80, inner_m=30)
        v = ScalarField(grid, v.values + z[:m].reshape(grid.shape))
        mu += float(z[m])
        c += float(z[m + 1])
    raise MaxIters(f"stationarity polish did not converge in {opts.newton_max} steps")


def minimize_energy(
    bg: HermitianBackground,
    g: ScalarField,
    phi0: ScalarField,
    opts: VariationalOptions | None = None,
    callback=None,
) -> VariationalState:
    """Minimize the Dirichlet energy on the constraint surface.

    Projected gradient with Armijo backtracking and bump restoration until
    the projected gradient drops below the handoff threshold, then bordered
    Newton on the stationarity system.  The multiplier lam is recovered
    from the weighted Dirichlet integral against exp(-2v/n) and is negative
    whenever the target has negative mean.
    """
    opts = opts or VariationalOptions()
    grid = bg.grid
    n = grid.n
    chi = restoration_bump(bg, g)
    # Descent runs in the shifted-H1 metric: the projected residual is
    # preconditioned by (Delta + shift)^-1, which keeps the step size and
    # iteration count grid-independent.  Stationarity is still measured on
    # the raw projected residual.
    precond = gf._precond_apply(grid, opts.precond_shift)

    def energy(vv: ScalarField) -> float:
        dv = gf.gradient(vv)
        return 0.5 * bg.integrate(bg.form_pairing(dv, dv))

    v = phi0
    tau = opts.tau_init
    energies = [energy(v)]
    mu = 0.0
    reached_handoff = False
    iterations = 0
    for iterations in range(1, opts.max_iters + 1):
        r = hm.chern_laplacian(bg, v)
        a1 = ScalarField(grid, (2.0 / n) * g.values * np.exp(2.0 * v.values / n))
        mu_ls, c_ls = _multipliers(bg, r, a1)
        r_proj = r - mu_ls * a1 - c_ls
        stat = float(np.sqrt(bg.inner(r_proj, r_proj)))
        if stat < opts.handoff:
            mu = mu_ls * (2.0 / n)
            reached_handoff = True
            break
        d = ScalarField(grid, -precond(r_proj.values))
        slope = bg.inner(r_proj, d)  # negative since the preconditioner is SPD
        step = tau
        accepted = None
        for _ in range(45):
            trial = _restore(bg, g, v + step * d, chi, tol=1e-13)
            if trial is not None and energy(trial) <= energies[-1] + opts.armijo * step * slope:
                accepted = trial
                break
            step *= 0.5
        if accepted is None:
            raise LineSearchFailed(f"no acceptable step at iteration {iterations}")
        v = accepted
        tau = min(step * 2.0, 1.0)
        energies.append(energy(v))
        if callback is not None:
            callback(v)
    if not reached_handoff:
        raise MaxIters(f"projected gradient did not reach handoff in {opts.max_iters} steps")

    v, mu, c, newton_iters = _newton_polish(bg, g, v, mu, opts)
    energies.append(energy(v))

    expv = np.exp(2.0 * v.values / n)
    constraint_residual = abs(_constraint(bg, g, v))
    stationarity = float(
        np.sqrt(
            bg.inner(
                hm.chern_laplacian(bg, v) - ScalarField(grid, mu * g.values * expv),
                hm.chern_laplacian(bg, v) - ScalarField(grid, mu * g.values * expv),
            )
        )
    )
    dv = gf.gradient(v)
    weighted = ScalarField(grid, np.exp(-2.0 * v.values / n)) * bg.form_pairing(dv, dv)
    lam = bg.integrate(weighted) / bg.integrate(g)
    gamma = (n / 2.0) * float(np.log(-2.0 * lam / n)) if lam < 0.0 else float("nan")
    return VariationalState(
        v=v,
        lam=lam,
        gamma=gamma,
        energy=energies[-1],
        constraint_residual=constraint_residual,
        mean_multiplier=c,
        stationarity=stationarity,
        iterations=iterations + newton_iters,
        energy_trace=tuple(energies),
    )


def recover_solution(state: VariationalState, n: int) -> ScalarField:
    """Shift the minimizer by gamma = (n/2) log(-2 lam / n)."""
    if not state.lam < 0.0:
        raise NonNegativeMultiplier(f"multiplier {state.lam:.3e} is not negative")
    gamma = (n / 2.0) * float(np.log(-2.0 * state.lam / n))
    return state.v + gamma


def solve_sign_changing(
    bg: HermitianBackground,
    g: ScalarField,
    opts: VariationalOptions | None = None,
    callback=None,
) -> tuple[ScalarField, VariationalState]:
    """Full pipeline: hypotheses, feasible start, minimization, recovery."""
    if not check_hypotheses(bg, g):
        raise WrongRegime("target violates the sign/mean hypotheses")
    phi0 = initial_feasible(bg, g)
    state = minimize_energy(bg, g, phi0, opts, callback=callback)
    u = recover_solution(state, bg.grid.n)
    return u, state
