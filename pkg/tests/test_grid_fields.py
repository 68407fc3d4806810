"""Discrete calculus and linear-solve contracts."""

import numpy as np
import pytest

from conftest import make_grid, random_oneform, random_resolved
from pcsc.errors import GridMismatch, SingularOperator
from pcsc.grid_fields import (
    OneFormField,
    ScalarField,
    TorusGrid,
    adjoint_apply,
    adjoint_null,
    divergence,
    gradient,
    integrate,
    laplacian_flat,
    pairing,
    partial_derivative,
    solve_linear,
)


class TestTorusGrid:
    def test_valid_construction(self):
        grid = TorusGrid(2, 32, 3)
        assert grid.shape == (32, 32)
        assert grid.size == 1024
        assert grid.cell_volume == pytest.approx((1 / 32) ** 2)

    @pytest.mark.parametrize(
        "d,N,n", [(0, 32, 2), (5, 32, 2), (2, 24, 2), (2, 4, 2), (2, 32, 1)]
    )
    def test_invalid_construction(self, d, N, n):
        with pytest.raises(ValueError):
            TorusGrid(d, N, n)

    def test_fields_are_immutable(self):
        grid = make_grid()
        f = ScalarField.constant(grid, 1.0)
        with pytest.raises(ValueError):
            f.values[0, 0] = 2.0


class TestPartialDerivative:
    def test_constant_has_zero_derivative(self):
        grid = make_grid()
        df = partial_derivative(ScalarField.constant(grid, 3.7), 0)
        assert df.norm_inf() == 0.0

    def test_single_mode_is_exact(self):
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        f = ScalarField(grid, np.cos(2 * np.pi * x))
        df = partial_derivative(f, 0)
        assert (df - ScalarField(grid, -2 * np.pi * np.sin(2 * np.pi * x))).norm_inf() < 1e-12

    def test_product_mode_matches_analytic(self):
        # Oracle: the analytic product-rule expression sampled on the grid.
        grid = make_grid(N=32)
        x, y = grid.meshgrid()
        f = ScalarField(grid, np.cos(2 * np.pi * x) * np.cos(4 * np.pi * y))
        expected = -4 * np.pi * np.cos(2 * np.pi * x) * np.sin(4 * np.pi * y)
        assert (partial_derivative(f, 1) - ScalarField(grid, expected)).norm_inf() < 1e-11

    def test_output_mean_is_zero(self, rng):
        grid = make_grid()
        f = random_resolved(grid, rng)
        assert abs(partial_derivative(f, 0).mean()) < 1e-14

    def test_axis_out_of_range(self):
        grid = make_grid()
        with pytest.raises(ValueError):
            partial_derivative(ScalarField.constant(grid, 1.0), 2)


class TestLaplacian:
    def test_kernel_contains_constants(self):
        grid = make_grid()
        assert laplacian_flat(ScalarField.constant(grid, 5.0)).norm_inf() == 0.0

    def test_eigenmode(self):
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        f = ScalarField(grid, np.cos(2 * np.pi * x))
        assert (laplacian_flat(f) - 4 * np.pi**2 * f).norm_inf() < 1e-11

    def test_linearity_on_two_modes(self):
        grid = make_grid(N=32)
        x, y = grid.meshgrid()
        f = ScalarField(grid, np.sin(2 * np.pi * x) + np.cos(4 * np.pi * y))
        expected = 4 * np.pi**2 * np.sin(2 * np.pi * x) + 16 * np.pi**2 * np.cos(4 * np.pi * y)
        assert (laplacian_flat(f) - ScalarField(grid, expected)).norm_inf() < 1e-10

    def test_output_mean_vanishes(self, rng):
        grid = make_grid()
        f = random_resolved(grid, rng, amp=2.0)
        assert abs(laplacian_flat(f).mean()) < 1e-13


class TestIntegrate:
    def test_unit_volume(self):
        grid = make_grid()
        assert integrate(ScalarField.constant(grid, 1.0)) == pytest.approx(1.0, abs=1e-15)

    def test_mean_zero_mode(self):
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        assert abs(integrate(ScalarField(grid, np.cos(2 * np.pi * x)))) < 1e-14

    def test_weighted_against_dense_quadrature(self):
        # Oracle (frozen): mean of exp(0.6 cos(2 pi x)) over [0,1) computed on
        # a 2^18-point grid, also the modified Bessel value I0(0.6).
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        density = ScalarField(grid, np.exp(2 * 0.3 * np.cos(2 * np.pi * x)))
        value = integrate(ScalarField.constant(grid, 1.0), density)
        assert value == pytest.approx(1.0920453643173393, abs=1e-10)

    def test_rejects_nonpositive_density(self):
        grid = make_grid()
        with pytest.raises(ValueError):
            integrate(ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 0.0))


class TestPairing:
    def test_gradient_square(self):
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        a = gradient(ScalarField(grid, np.cos(2 * np.pi * x)))
        expected = 4 * np.pi**2 * np.sin(2 * np.pi * x) ** 2
        assert (pairing(a, a) - ScalarField(grid, expected)).norm_inf() < 1e-10

    def test_orthogonal_axes(self):
        grid = make_grid(N=32)
        x, y = grid.meshgrid()
        a = OneFormField.from_fields([ScalarField(grid, np.sin(2 * np.pi * x)), ScalarField.zeros(grid)])
        b = OneFormField.from_fields([ScalarField.zeros(grid), ScalarField(grid, np.cos(2 * np.pi * y))])
        assert pairing(a, b).norm_inf() == 0.0

    def test_weighted_equals_unweighted_times_weight(self, rng):
        grid = make_grid()
        a = random_oneform(grid, rng)
        b = random_oneform(grid, rng)
        w = ScalarField(grid, np.exp(random_resolved(grid, rng).values))
        assert (pairing(a, b, w) - pairing(a, b) * w).norm_inf() < 1e-13

    def test_grid_mismatch(self, rng):
        a = random_oneform(make_grid(N=16), rng)
        b = random_oneform(make_grid(N=32), rng)
        with pytest.raises(GridMismatch):
            pairing(a, b)


class TestSolveLinear:
    def test_eigenmode_inversion(self):
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        rhs = ScalarField(grid, 4 * np.pi**2 * np.cos(2 * np.pi * x))
        u = solve_linear(OneFormField.zero(grid), ScalarField.zeros(grid), rhs)
        assert (u - ScalarField(grid, np.cos(2 * np.pi * x))).norm_inf() < 1e-10
        assert abs(u.mean()) < 1e-12

    def test_constants(self):
        grid = make_grid()
        u = solve_linear(
            OneFormField.zero(grid), ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 1.0)
        )
        assert (u - 1.0).norm_inf() < 1e-10

    def test_forward_apply_roundtrip_with_drift(self):
        # Oracle: build rhs by forward application, then invert.
        grid = make_grid(N=32)
        x = grid.meshgrid()[0]
        theta = OneFormField.from_fields(
            [ScalarField.constant(grid, 0.7), ScalarField.zeros(grid)]
        )
        u_star = ScalarField(grid, np.sin(2 * np.pi * x))
        rhs = laplacian_flat(u_star) + pairing(gradient(u_star), theta)
        u = solve_linear(theta, ScalarField.zeros(grid), rhs)
        assert (u - u_star).norm_inf() < 1e-9

    def test_roundtrip_random_fields(self, rng):
        grid = make_grid(N=32)
        theta = random_oneform(grid, rng)
        for _ in range(5):
            u_star = random_resolved(grid, rng)
            u_star = u_star - u_star.mean()
            rhs = laplacian_flat(u_star) + pairing(gradient(u_star), theta)
            u = solve_linear(theta, ScalarField.zeros(grid), rhs)
            assert (u - u_star).norm_inf() < 1e-8

    def test_incompatible_rhs_raises(self, rng):
        grid = make_grid(N=16)
        x = grid.meshgrid()[0]
        theta = OneFormField.from_fields(
            [ScalarField(grid, 0.4 * np.sin(2 * np.pi * x)), ScalarField.zeros(grid)]
        )
        with pytest.raises(SingularOperator):
            solve_linear(theta, ScalarField.zeros(grid), ScalarField.constant(grid, 1.0))

    def test_variable_coefficient(self, rng):
        grid = make_grid(N=32)
        c = ScalarField(grid, 1.0 + 0.5 * random_resolved(grid, rng).values)
        theta = random_oneform(grid, rng)
        u_star = random_resolved(grid, rng)
        rhs = laplacian_flat(u_star) + pairing(gradient(u_star), theta) + c * u_star
        u = solve_linear(theta, c, rhs)
        assert (u - u_star).norm_inf() < 1e-8


class TestOperatorIdentities:
    def test_adjoint_by_parts(self, rng):
        grid = make_grid(N=32)
        for _ in range(5):
            a = random_resolved(grid, rng)
            b = random_resolved(grid, rng)
            lhs = integrate(laplacian_flat(a) * b)
            rhs = integrate(a * laplacian_flat(b))
            assert abs(lhs - rhs) < 1e-10 * a.norm_l2() * b.norm_l2() + 1e-14

    def test_divergence_pairing(self, rng):
        # Discrete integration by parts: <ip(da, th), b> + <a div th, b>
        # + <a, ip(db, th)> = 0 for resolved data.
        grid = make_grid(N=32)
        theta = random_oneform(grid, rng, kmax=2)
        div_theta = divergence(theta)
        for _ in range(5):
            a = random_resolved(grid, rng, kmax=2)
            b = random_resolved(grid, rng, kmax=2)
            total = (
                integrate(pairing(gradient(a), theta) * b)
                + integrate(a * div_theta * b)
                + integrate(a * pairing(gradient(b), theta))
            )
            assert abs(total) < 1e-10

    def test_spectral_exactness(self, rng):
        grid = make_grid(N=32)
        x, y = grid.meshgrid()
        ks = [(1, 0), (3, 2), (7, -5), (0, 15)]
        amps = [0.5, 0.25, 0.1, 0.05]
        values = np.zeros(grid.shape)
        d0 = np.zeros(grid.shape)
        for (kx, ky), a in zip(ks, amps):
            arg = 2 * np.pi * (kx * x + ky * y)
            values += a * np.cos(arg)
            d0 += -a * 2 * np.pi * kx * np.sin(arg)
        f = ScalarField(grid, values)
        assert (partial_derivative(f, 0) - ScalarField(grid, d0)).norm_inf() < 1e-11


class TestAdjointNull:
    def test_flat_kernel_is_constant(self):
        grid = make_grid()
        k0 = adjoint_null(OneFormField.zero(grid))
        assert (k0 - 1.0).norm_inf() < 1e-12

    def test_kernel_quality_and_positivity(self, rng):
        grid = make_grid(N=32)
        for _ in range(3):
            theta = random_oneform(grid, rng)
            k0 = adjoint_null(theta)
            assert k0.min() > 0.0
            assert k0.mean() == pytest.approx(1.0, abs=1e-12)
            assert adjoint_apply(theta, k0).norm_l2() / k0.norm_l2() < 1e-10
