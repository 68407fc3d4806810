"""Background calculus: operators, eccentricity, normalization, degree."""

import numpy as np
import pytest

from conftest import (
    dense_adjoint_matrix,
    divergence_free_oneform,
    make_grid,
    random_background,
    random_oneform,
    random_resolved,
)
from pcsc.grid_fields import OneFormField, ScalarField, divergence, gradient
from pcsc.hermitian import (
    background,
    chern_adjoint,
    chern_laplacian,
    conformal_change,
    eccentricity,
    formula4_residual,
    gauduchon_degree,
    gauduchon_normalize,
    integral_identity_gap,
    is_balanced,
    is_gauduchon,
    prescribed_residual,
    scalar_curvature,
    solve_chern,
)


class TestChernLaplacian:
    def test_kernel_contains_constants(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        out = chern_laplacian(bg, ScalarField.constant(grid, 2.5))
        assert out.norm_inf() < 1e-13

    def test_flat_eigenmode(self):
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        bg = background(grid)
        f = ScalarField(grid, np.cos(2 * np.pi * x))
        assert (chern_laplacian(bg, f) - 4 * np.pi**2 * f).norm_inf() < 1e-11

    def test_constant_potential_scales_output(self, rng):
        grid = make_grid()
        theta = random_oneform(grid, rng)
        base = background(grid, theta0=theta)
        shifted = background(grid, theta0=theta, potential=0.8)
        f = random_resolved(grid, rng)
        expected = np.exp(-2 * 0.8 / grid.n) * chern_laplacian(base, f)
        assert (chern_laplacian(shifted, f) - expected).norm_inf() < 1e-12

    def test_conformal_covariance(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        u = random_resolved(grid, rng, amp=0.25)
        f = random_resolved(grid, rng)
        lhs = chern_laplacian(conformal_change(bg, u), f)
        rhs = ScalarField(grid, np.exp(-2 * u.values / grid.n)) * chern_laplacian(bg, f)
        assert (lhs - rhs).norm_inf() < 1e-10


class TestChernAdjoint:
    def test_flat_case_is_self_adjoint(self, rng):
        grid = make_grid()
        bg = background(grid)
        f = random_resolved(grid, rng)
        assert (chern_adjoint(bg, f) - chern_laplacian(bg, f)).norm_inf() < 1e-12

    def test_adjointness_weighted_inner_product(self, rng):
        grid = make_grid()
        for _ in range(5):
            bg = random_background(grid, rng)
            a = random_resolved(grid, rng)
            b = random_resolved(grid, rng)
            gap = abs(bg.inner(chern_laplacian(bg, a), b) - bg.inner(a, chern_adjoint(bg, b)))
            assert gap < 1e-10 * a.norm_l2() * b.norm_l2() + 1e-14

    def test_constant_picks_out_zeroth_order_term(self, rng):
        grid = make_grid()
        theta = random_oneform(grid, rng)
        bg = background(grid, theta0=theta)
        out = chern_adjoint(bg, ScalarField.constant(grid, 1.0))
        assert (out + divergence(theta)).norm_inf() < 1e-11


class TestEccentricity:
    def test_divergence_free_torsion_gives_one(self, rng):
        grid = make_grid()
        bg = background(grid, theta0=divergence_free_oneform(grid, rng))
        assert (eccentricity(bg) - 1.0).norm_inf() < 1e-7

    def test_dense_null_space_oracle(self, rng):
        # Oracle: smallest singular vector of the dense adjoint matrix at N=8.
        grid = make_grid(N=8)
        x = grid.meshgrid()[0]
        theta = OneFormField.from_fields(
            [ScalarField(grid, 0.4 * np.sin(2 * np.pi * x)), ScalarField.zeros(grid)]
        )
        bg = background(grid, theta0=theta)
        f0 = eccentricity(bg)
        mat = dense_adjoint_matrix(grid, theta)
        _, svals, vt = np.linalg.svd(mat)
        assert svals[-1] < 1e-8 * svals[0]
        kernel = vt[-1].reshape(grid.shape)
        kernel = kernel / kernel.mean()
        assert np.abs(kernel - f0.values).max() < 1e-8

    def test_positive_and_normalized(self, rng):
        grid = make_grid()
        for _ in range(5):
            bg = random_background(grid, rng)
            f0 = eccentricity(bg)
            assert f0.min() > 0.0
            assert abs(bg.integrate(f0) - bg.volume) < 1e-9 * max(1.0, bg.volume)

    def test_adjoint_kernel_quality(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        f0 = eccentricity(bg)
        assert chern_adjoint(bg, f0).norm_l2() < 1e-9 * f0.norm_l2()


class TestGauduchonFlags:
    def test_flat_torus(self):
        bg = background(make_grid())
        assert is_gauduchon(bg) and is_balanced(bg)

    def test_divergence_free_nonzero_torsion(self, rng):
        grid = make_grid()
        bg = background(grid, theta0=divergence_free_oneform(grid, rng))
        assert is_gauduchon(bg)
        assert not is_balanced(bg)

    def test_gradient_potential_breaks_flag(self):
        grid = make_grid()
        x = grid.meshgrid()[0]
        bg = background(grid, potential=ScalarField(grid, np.cos(2 * np.pi * x)))
        # div of the effective torsion (2(n-1)/n) du is nonzero here.
        assert not is_gauduchon(bg)


class TestConformalChange:
    def test_identity(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        bg2 = conformal_change(bg, ScalarField.zeros(grid))
        assert (bg2.potential - bg.potential).norm_inf() == 0.0

    def test_round_trip(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        u = random_resolved(grid, rng)
        back = conformal_change(conformal_change(bg, u), -1.0 * u)
        assert (back.potential - bg.potential).norm_inf() < 1e-14

    def test_volume_update(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        u = random_resolved(grid, rng)
        expected = float(np.exp(2 * (bg.potential.values + u.values)).mean())
        assert conformal_change(bg, u).volume == pytest.approx(expected, rel=1e-14)


class TestScalarCurvature:
    def test_identity_at_zero_potential(self, rng):
        grid = make_grid()
        s0 = random_resolved(grid, rng)
        bg = background(grid, theta0=random_oneform(grid, rng), S0=s0)
        assert (scalar_curvature(bg) - s0).norm_inf() < 1e-13

    def test_constant_potential_scaling(self, rng):
        grid = make_grid()
        s0 = random_resolved(grid, rng)
        bg = background(grid, S0=s0, potential=0.6)
        expected = np.exp(-2 * 0.6 / grid.n) * s0
        assert (scalar_curvature(bg) - expected).norm_inf() < 1e-13

    def test_direct_evaluation_oracle(self):
        grid = make_grid(N=64)
        x = grid.meshgrid()[0]
        pot = ScalarField(grid, 0.2 * np.cos(2 * np.pi * x))
        bg = background(grid, potential=pot)
        expected = np.exp(-2 * pot.values / grid.n) * (
            0.2 * 4 * np.pi**2 * np.cos(2 * np.pi * x)
        )
        assert (scalar_curvature(bg) - ScalarField(grid, expected)).norm_inf() < 1e-10


class TestGauduchonNormalize:
    def test_fixed_point(self):
        bg = background(make_grid(), S0=-1.0)
        bg2, u = gauduchon_normalize(bg)
        assert u.norm_inf() < 1e-12
        assert abs(bg2.volume - 1.0) < 1e-12

    def test_exact_torsion_becomes_divergence_free(self, rng):
        grid = make_grid()
        h = random_resolved(grid, rng, amp=0.5)
        bg = background(grid, theta0=gradient(h))
        bg2, _ = gauduchon_normalize(bg)
        assert is_gauduchon(bg2, 1e-8)
        # Exact torsion is fully absorbed: the representative is balanced.
        assert is_balanced(bg2, 1e-7)

    def test_normalized_background_contracts(self, rng):
        grid = make_grid()
        for _ in range(3):
            bg = random_background(grid, rng)
            bg2, _ = gauduchon_normalize(bg)
            assert is_gauduchon(bg2, 1e-8)
            assert abs(bg2.volume - 1.0) < 1e-10
            assert (eccentricity(bg2) - 1.0).norm_inf() < 1e-7


class TestGauduchonDegree:
    def test_flat_zero(self):
        assert gauduchon_degree(background(make_grid())) == pytest.approx(0.0, abs=1e-12)

    def test_base_is_representative(self):
        grid = make_grid()
        x = grid.meshgrid()[0]
        bg = background(grid, S0=ScalarField(grid, -1.0 + np.cos(2 * np.pi * x)))
        assert gauduchon_degree(bg) == pytest.approx(-1.0, abs=1e-12)

    def test_conformal_invariance(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        base = gauduchon_degree(bg)
        for _ in range(5):
            u = random_resolved(grid, rng, amp=0.5)
            value = gauduchon_degree(conformal_change(bg, u))
            assert abs(value - base) < 1e-6 * max(1.0, abs(base))


class TestResidualIdentities:
    def test_formula4_constant_is_exact_zero(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        assert formula4_residual(bg, ScalarField.constant(grid, 0.7)) < 1e-13

    def test_formula4_resolved_single_mode(self):
        grid = make_grid(N=64)
        x = grid.meshgrid()[0]
        bg = background(grid)
        assert formula4_residual(bg, ScalarField(grid, 0.3 * np.cos(2 * np.pi * x))) < 1e-8

    def test_formula4_with_torsion(self, rng):
        grid = make_grid(N=64)
        bg = background(grid, theta0=random_oneform(grid, rng))
        u = random_resolved(grid, rng, amp=0.3, kmax=2)
        assert formula4_residual(bg, u) < 1e-8

    def test_prescribed_residual_solved_case(self):
        grid = make_grid()
        bg = background(grid, S0=-0.7)
        assert prescribed_residual(bg, ScalarField.constant(grid, -0.7), ScalarField.zeros(grid)) == 0.0

    def test_prescribed_residual_manufactured(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        u_star = random_resolved(grid, rng)
        g_star = scalar_curvature(conformal_change(bg, u_star))
        assert prescribed_residual(bg, g_star, u_star) < 1e-10

    def test_prescribed_residual_trivial_gap(self, rng):
        grid = make_grid()
        s0 = random_resolved(grid, rng)
        g = random_resolved(grid, rng)
        bg = background(grid, S0=s0)
        assert prescribed_residual(bg, g, ScalarField.zeros(grid)) == pytest.approx(
            (s0 - g).norm_inf(), rel=1e-12
        )

    def test_integral_identity_for_solutions(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        u_star = random_resolved(grid, rng)
        g_star = scalar_curvature(conformal_change(bg, u_star))
        assert integral_identity_gap(bg, g_star, u_star) < 1e-9

    def test_kernel_pairing_vanishes(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        f0 = eccentricity(bg)
        for _ in range(3):
            u = random_resolved(grid, rng)
            assert abs(bg.integrate(chern_laplacian(bg, u) * f0)) < 1e-8


class TestSolveChern:
    def test_weighted_solve_roundtrip(self, rng):
        grid = make_grid()
        bg = random_background(grid, rng)
        u_star = random_resolved(grid, rng)
        c = 0.8
        rhs = chern_laplacian(bg, u_star) + c * u_star
        u = solve_chern(bg, c, rhs)
        assert (u - u_star).norm_inf() < 1e-8
