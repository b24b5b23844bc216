"""Dense-matrix oracles built from first principles (DFT matrices), used to
cross-check the matrix-free spectral paths on small 1D grids."""

import numpy as np

from dslab.spectral_core import ComplexField, Grid


def dft_matrix(n: int) -> np.ndarray:
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.exp(-2j * np.pi * j * k / n)


def dense_derivative_1d(grid: Grid) -> np.ndarray:
    """Dense matrix of the spectral derivative D = -i d/dx on a 1D grid."""
    assert grid.dim == 1
    n = grid.n_per_axis
    F = dft_matrix(n)
    Finv = np.conj(F).T / n
    return Finv @ np.diag(grid.axis_freqs) @ F


def dense_multiplier_1d(grid: Grid, symbol_values: np.ndarray) -> np.ndarray:
    """Dense matrix of a Fourier multiplier on a 1D grid."""
    assert grid.dim == 1
    n = grid.n_per_axis
    F = dft_matrix(n)
    Finv = np.conj(F).T / n
    return Finv @ np.diag(symbol_values) @ F


def dense_conformal_p_1d(grid: Grid, c_values: np.ndarray) -> np.ndarray:
    """Dense stencil of the divergence-form kinetic part D (c .) D, w = 1."""
    D = dense_derivative_1d(grid)
    return D @ np.diag(c_values) @ D


def dense_operator_matrix(apply_fn, grid: Grid) -> np.ndarray:
    """Assemble any field map densely by applying it to the canonical basis."""
    n = grid.n_points
    mat = np.zeros((n, n), dtype=np.complex128)
    for j in range(n):
        e = np.zeros(n, dtype=np.complex128)
        e[j] = 1.0
        mat[:, j] = apply_fn(ComplexField(grid, e.reshape(grid.shape))).values.ravel()
    return mat
