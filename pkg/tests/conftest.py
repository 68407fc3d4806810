"""Shared builders for resolved random fields and backgrounds."""

import numpy as np
import pytest

from pcsc.grid_fields import OneFormField, ScalarField, TorusGrid
from pcsc.hermitian import background


def make_grid(N=32, d=2, n=2) -> TorusGrid:
    return TorusGrid(d, N, n)


def random_resolved(grid, rng, amp=0.3, kmax=2, terms=4) -> ScalarField:
    """Sum of a few low Fourier modes, normalized to the requested amplitude.

    kmax is kept small so that exponentials of these fields stay resolved
    (spectrally accurate) at desk-scale N.
    """
    coords = grid.meshgrid()
    values = np.zeros(grid.shape)
    for _ in range(terms):
        kvec = rng.integers(-kmax, kmax + 1, grid.d)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        arg = sum(2.0 * np.pi * k * c for k, c in zip(kvec, coords)) + phase
        values += rng.normal() * np.cos(arg)
    peak = np.abs(values).max()
    if peak < 1e-12:
        values = np.cos(2.0 * np.pi * coords[0])
        peak = 1.0
    return ScalarField(grid, amp * values / peak)


def random_oneform(grid, rng, amp=0.4, kmax=2) -> OneFormField:
    return OneFormField.from_fields(
        [random_resolved(grid, rng, amp=amp, kmax=kmax) for _ in range(grid.d)]
    )


def divergence_free_oneform(grid, rng, amp=0.4) -> OneFormField:
    """Rotated gradient (d=2) or constant form: divergence vanishes exactly."""
    from pcsc.grid_fields import partial_derivative

    if grid.d == 1:
        return OneFormField.from_fields([ScalarField.constant(grid, amp)])
    stream = random_resolved(grid, rng, amp=amp, kmax=2)
    comps = [partial_derivative(stream, 1), -1.0 * partial_derivative(stream, 0)]
    for _ in range(grid.d - 2):
        comps.append(ScalarField.zeros(grid))
    return OneFormField.from_fields(comps)


def random_background(grid, rng, torsion_amp=0.4, s_amp=0.5, pot_amp=0.3):
    return background(
        grid,
        theta0=random_oneform(grid, rng, amp=torsion_amp),
        S0=random_resolved(grid, rng, amp=s_amp),
        potential=random_resolved(grid, rng, amp=pot_amp),
    )


def dense_adjoint_matrix(grid, theta) -> np.ndarray:
    """Independent dense assembly of the flat adjoint operator for oracles."""
    from pcsc.grid_fields import ScalarField, adjoint_apply

    m = grid.size
    mat = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        mat[:, j] = adjoint_apply(theta, ScalarField(grid, e.reshape(grid.shape))).values.ravel()
    return mat


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
