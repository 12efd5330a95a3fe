"""Shared fixtures and dense-matrix oracles.

The oracles assemble the reflected-ghost Neumann stencil as ordinary dense
matrices and never touch the package's transform path, so every spectral
result is checked against an independent computation.
"""

import numpy as np
import pytest

from choc import Field, Grid, TimeGrid, double_well, multiplicative_noise
from choc.grid import low_pass_field
from choc.state import StateParams


def dense_lap_1d(n: int, h: float) -> np.ndarray:
    """Second-difference matrix with reflected ghost cells."""
    a = np.zeros((n, n))
    for i in range(n):
        a[i, i] -= 2.0
        a[i, max(i - 1, 0)] += 1.0
        a[i, min(i + 1, n - 1)] += 1.0
    return a / h**2


def dense_neumann_laplacian(grid: Grid) -> np.ndarray:
    """Dense Laplacian acting on row-major flattened fields."""
    mats = [dense_lap_1d(n, h) for n, h in zip(grid.npoints, grid.spacings)]
    if grid.ndims == 1:
        return mats[0]
    ix = np.eye(grid.npoints[0])
    iy = np.eye(grid.npoints[1])
    return np.kron(mats[0], iy) + np.kron(ix, mats[1])


def apply_dense(mat: np.ndarray, field: Field) -> np.ndarray:
    return (mat @ field.values.ravel()).reshape(field.grid.shape)


def random_field(grid: Grid, rng, smooth=False, amplitude=1.0) -> Field:
    if smooth:
        return low_pass_field(grid, rng, amplitude)
    return Field(grid, amplitude * rng.standard_normal(grid.shape))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def grid64():
    return Grid((64,), (1.0,))


@pytest.fixture
def grid2d():
    return Grid((16, 12), (1.0, 1.5))


@pytest.fixture
def small_params():
    """Cheap 1D setup used across the solver tests."""
    g = Grid((32,), (1.0,))
    tg = TimeGrid(0.02, 40)
    nm = multiplicative_noise(g, [0.1, 0.1])
    return StateParams(grid=g, timegrid=tg, potential=double_well(), noise=nm)
