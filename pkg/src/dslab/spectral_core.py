"""Periodic-grid fields, Fourier multipliers, spatial weights, and dilations.

Conventions used throughout the package:

* The box is [-L, L)^d with n points per axis, spacing h = 2L/n.
* Discrete frequencies per axis are xi_k = pi*k/L for k in the signed
  Nyquist range; the single unpaired Nyquist mode is stored with a
  positive sign (it aliases its negative twin on the grid).
* FFTs are unnormalized forward, divided by the point count on the way
  back (the numpy/scipy default), and all norms carry the quadrature
  weight h^d so they are directly comparable with continuum L^p norms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as _sfft

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Set the worker budget handed to scipy.fft (the CLI owns this)."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def fftn(a: np.ndarray) -> np.ndarray:
    return _sfft.fftn(a, workers=_FFT_WORKERS)


def ifftn(a: np.ndarray) -> np.ndarray:
    return _sfft.ifftn(a, workers=_FFT_WORKERS)


class DilationBoundaryWarning(UserWarning):
    """More than 1% of the points requested by a dilation left the box."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-L, L)^d.

    Derived arrays (spacing, per-axis coordinates and frequencies, and the
    meshes |xi|^2 and <x> = sqrt(1+|x|^2)) are computed once at
    construction; the instance is immutable and safe to share.
    """

    dim: int
    n_per_axis: int
    half_length: float

    spacing: float = field(init=False, repr=False)
    axis_coords: np.ndarray = field(init=False, repr=False)
    axis_freqs: np.ndarray = field(init=False, repr=False)
    freq_mesh: np.ndarray = field(init=False, repr=False)
    xi_sq_mesh: np.ndarray = field(init=False, repr=False)
    x_sq_mesh: np.ndarray = field(init=False, repr=False)
    coord_mesh: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        d, n, L = self.dim, self.n_per_axis, self.half_length
        if d < 1:
            raise ValueError(f"dim must be >= 1, got {d}")
        if n < 4 or n % 2 != 0:
            raise ValueError(f"n_per_axis must be even and >= 4, got {n}")
        if not L > 0:
            raise ValueError(f"half_length must be > 0, got {L}")
        h = 2.0 * L / n
        coords = -L + h * np.arange(n)
        freqs = 2.0 * np.pi * _sfft.fftfreq(n, d=h)
        # fftfreq puts the unpaired Nyquist mode at -pi*n/(2L); flip it to
        # the positive alias so the frequency table reads {0, ±.., +pi n/2L}.
        freqs[n // 2] = abs(freqs[n // 2])
        mesh_axes = np.meshgrid(*([freqs] * d), indexing="ij", sparse=False)
        freq_mesh = np.stack(mesh_axes)
        coord_axes = np.meshgrid(*([coords] * d), indexing="ij", sparse=False)
        coord_mesh = np.stack(coord_axes)
        object.__setattr__(self, "spacing", h)
        object.__setattr__(self, "axis_coords", coords)
        object.__setattr__(self, "axis_freqs", freqs)
        object.__setattr__(self, "freq_mesh", freq_mesh)
        object.__setattr__(self, "xi_sq_mesh", np.sum(freq_mesh**2, axis=0))
        object.__setattr__(self, "coord_mesh", coord_mesh)
        object.__setattr__(self, "x_sq_mesh", np.sum(coord_mesh**2, axis=0))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.dim

    @property
    def n_points(self) -> int:
        return self.n_per_axis**self.dim

    @property
    def quad_weight(self) -> float:
        return self.spacing**self.dim

    def japanese_bracket(self, s: float) -> np.ndarray:
        """Mesh of <x>^s = (1+|x|^2)^(s/2)."""
        return (1.0 + self.x_sq_mesh) ** (s / 2.0)

    def boundary_band_mask(self, band: float = 0.1) -> np.ndarray:
        """Points with max_j |x_j| >= (1-band)*L."""
        return np.max(np.abs(self.coord_mesh), axis=0) >= (1.0 - band) * self.half_length


def make_grid(dim: int, n_per_axis: int, half_length: float) -> Grid:
    """Build a periodic grid; rejects odd n_per_axis and non-positive L."""
    return Grid(dim=int(dim), n_per_axis=int(n_per_axis), half_length=float(half_length))


@dataclass
class ComplexField:
    """Complex-valued state sampled on a Grid (row-major axis order)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            if self.values.size == self.grid.n_points:
                self.values = self.values.reshape(self.grid.shape)
            else:
                raise ValueError(
                    f"field has {self.values.size} values, grid has {self.grid.n_points} points"
                )

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy())

    def l2_norm(self) -> float:
        """Quadrature L^2 norm: sqrt(h^d * sum |f|^2)."""
        return float(np.sqrt(self.grid.quad_weight * np.sum(np.abs(self.values) ** 2)))

    def inner(self, other: "ComplexField") -> complex:
        """<f, g> = h^d * sum f * conj(g)."""
        return complex(self.grid.quad_weight * np.vdot(other.values, self.values))

    def lp_norm(self, p: float) -> float:
        """Quadrature L^p norm; p = inf gives the sup over grid points."""
        if p == np.inf:
            return float(np.max(np.abs(self.values)))
        if p < 1:
            raise ValueError(f"p must be >= 1, got {p}")
        return float((self.grid.quad_weight * np.sum(np.abs(self.values) ** p)) ** (1.0 / p))


def random_field(grid: Grid, rng: np.random.Generator, normalized: bool = False) -> ComplexField:
    vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    f = ComplexField(grid, vals)
    if normalized:
        f.values /= f.l2_norm()
    return f


def plane_wave(grid: Grid, k_index: np.ndarray) -> ComplexField:
    """exp(i xi . x) with xi = pi*k/L, exact eigenfunction of grid multipliers."""
    k = np.asarray(k_index, dtype=float)
    if k.shape != (grid.dim,):
        raise ValueError(f"k_index must have shape ({grid.dim},)")
    xi = np.pi * k / grid.half_length
    phase = np.tensordot(xi, grid.coord_mesh, axes=(0, 0))
    return ComplexField(grid, np.exp(1j * phase))


def gaussian_packet(
    grid: Grid,
    center: np.ndarray | float = 0.0,
    width: float = 1.0,
    momentum: np.ndarray | float = 0.0,
) -> ComplexField:
    """exp(-|x-c|^2 / (2 width^2)) * exp(i k.x)."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    k = np.broadcast_to(np.asarray(momentum, dtype=float), (grid.dim,))
    shifted = grid.coord_mesh - c.reshape((grid.dim,) + (1,) * grid.dim)
    r_sq = np.sum(shifted**2, axis=0)
    phase = np.tensordot(k, grid.coord_mesh, axes=(0, 0))
    return ComplexField(grid, np.exp(-r_sq / (2.0 * width**2)) * np.exp(1j * phase))


@dataclass(frozen=True)
class FourierSymbol:
    """Pure map xi -> m(xi); evaluator acts on a stacked mesh (d, ...)."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def on_grid(self, grid: Grid) -> np.ndarray:
        return np.asarray(self.evaluator(grid.freq_mesh))


def sobolev_symbol(order: float) -> FourierSymbol:
    """<xi>^order = (1+|xi|^2)^(order/2), the fractional bracket operator."""
    return FourierSymbol(
        evaluator=lambda xi: (1.0 + np.sum(np.asarray(xi) ** 2, axis=0)) ** (order / 2.0),
        description=f"<xi>^{order}",
    )


def laplacian_symbol() -> FourierSymbol:
    """|xi|^2, the symbol of the (positive) free operator -Laplacian."""
    return FourierSymbol(
        evaluator=lambda xi: np.sum(np.asarray(xi) ** 2, axis=0),
        description="|xi|^2",
    )


def derivative_symbol(axis: int) -> FourierSymbol:
    """xi_axis, the symbol of D_j = -i d/dx_j."""
    return FourierSymbol(evaluator=lambda xi: np.asarray(xi)[axis], description=f"xi_{axis}")


def apply_multiplier(f: ComplexField, m: FourierSymbol) -> ComplexField:
    """inverse-FFT(m(xi) * FFT(f)); exact on grid plane waves."""
    return ComplexField(f.grid, ifftn(m.on_grid(f.grid) * fftn(f.values)))


def weight_apply(f: ComplexField, s: float) -> ComplexField:
    """Pointwise multiply by <x>^s in box coordinates."""
    if s == 0.0:
        return f.copy()
    return ComplexField(f.grid, f.values * f.grid.japanese_bracket(s))


@dataclass(frozen=True)
class DilationParams:
    """Parameter of the scaling group x -> e^theta x on d dimensions."""

    theta: float
    dim: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


def dilation_lp_factor(theta: float, dim: int, p: float) -> float:
    """Exact L^p operator norm e^(theta*(d/2 - d/p)) of the dilation group.

    With theta = ln|z|/2 this is |z|^(d/4 - d/(2p)).
    """
    if p < 1:
        raise ValueError(f"p must be in [1, inf], got {p}")
    inv_p = 0.0 if p == np.inf else 1.0 / p
    return float(np.exp(theta * (dim / 2.0 - dim * inv_p)))


def _dilation_interp_matrix(grid: Grid, scale: float) -> np.ndarray:
    """Per-axis evaluation matrix of the trig interpolant at scale*x.

    Row i evaluates the 1D interpolant at y_i = scale * x_i; rows whose
    target leaves [-L, L) are zeroed (off-box samples count as 0).
    """
    n, L = grid.n_per_axis, grid.half_length
    y = scale * grid.axis_coords
    inside = (y >= -L) & (y < L)
    phase = np.outer(y + L, grid.axis_freqs)
    mat = np.exp(1j * phase) / n
    mat[~inside, :] = 0.0
    return mat


def dilate(f: ComplexField, p: DilationParams) -> ComplexField:
    """x -> e^(d*theta/2) f(e^theta x), zero outside the box.

    Exact (a pure index gather) when e^theta maps the grid into itself,
    which holds for integer scale factors; otherwise the sample values are
    produced by trigonometric interpolation.
    """
    grid = f.grid
    if p.dim != grid.dim:
        raise ValueError(f"DilationParams.dim={p.dim} does not match grid dim {grid.dim}")
    n, L = grid.n_per_axis, grid.half_length
    scale = float(np.exp(p.theta))
    amp = float(np.exp(grid.dim * p.theta / 2.0))
    if p.theta == 0.0:
        return ComplexField(grid, f.values.copy())

    y = scale * grid.axis_coords
    inside = (y >= -L) & (y < L)
    frac_inside = np.count_nonzero(inside) / n
    frac_outside = 1.0 - frac_inside**grid.dim
    if frac_outside > 0.01:
        warnings.warn(
            f"dilation with scale {scale:.6g} sends {100 * frac_outside:.1f}% of the "
            "requested sample points outside the box (treated as 0)",
            DilationBoundaryWarning,
            stacklevel=2,
        )

    # Grid-exact path: source index j = (1-s)*n/2 + s*i must be integral.
    j_float = (1.0 - scale) * n / 2.0 + scale * np.arange(n)
    j_round = np.rint(j_float)
    if np.max(np.abs(j_float - j_round)) < 1e-9:
        idx = j_round.astype(int)
        valid = inside & (idx >= 0) & (idx < n)
        idx_safe = np.where(valid, idx, 0)
        out = f.values[np.ix_(*([idx_safe] * grid.dim))].copy()
        for ax in range(grid.dim):
            shape = [1] * grid.dim
            shape[ax] = n
            out = out * valid.reshape(shape)
        return ComplexField(grid, amp * out)

    mat = _dilation_interp_matrix(grid, scale)
    out = f.values
    for ax in range(grid.dim):
        out = np.moveaxis(
            np.tensordot(mat, _sfft.fft(out, axis=ax, workers=_FFT_WORKERS), axes=(1, ax)),
            0,
            ax,
        )
    return ComplexField(grid, amp * out)
