"""Metric, weight, and damping assembly for the damped operator.

The self-adjoint part is the divergence-form operator

    P f = (1/w) * sum_j D_j( w * sum_k G_jk D_k f ) + sum_j b_j D_j f

with spectral derivatives D_j = -i d/dx_j, which is Hermitian in the
w-weighted inner product by construction for real symmetric G (and b = 0).
The dissipative part sandwiches the fractional bracket multiplier between
multiplications by the damping coefficient, so it is Hermitian nonnegative
on the grid exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral_core import ComplexField, Grid, fftn, ifftn, random_field

METRIC_KINDS = ("identity", "conformal_bump", "conformal_ring", "user_table", "custom_conformal")
DAMPING_KINDS = ("none", "gaussian", "ring", "core_shell", "custom")


class AssemblyError(ValueError):
    """Operator assembly failed validation (non-SPD metric, negative damping, ...)."""


@dataclass(frozen=True)
class MetricSpec:
    """Conformal or tabulated metric G(x), a long-range perturbation of I.

    Built-in conformal profiles (G = c(x) I):
      identity         c = 1
      conformal_bump   c = 1 + amplitude * exp(-|x|^2 / width^2)
      conformal_ring   c = 1 + amplitude * exp(-(|x|^2 - ring_radius^2)^2 / width^4)
      custom_conformal c supplied as a callable of |x|^2 (gradients by
                       central differences where needed)
    user_table carries explicit per-point symmetric matrices.
    """

    kind: str = "identity"
    rho: float = 1.0
    amplitude: float = 0.0
    width: float = 1.0
    ring_radius: float = 0.0
    table: np.ndarray | None = None
    profile: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}; choose from {METRIC_KINDS}")
        if self.rho <= 0:
            raise ValueError("long-range decay rate rho must be > 0")
        if self.kind == "user_table" and self.table is None:
            raise ValueError("user_table metric requires a table of per-point matrices")
        if self.kind == "custom_conformal" and self.profile is None:
            raise ValueError("custom_conformal metric requires a profile callable")

    @property
    def is_conformal(self) -> bool:
        return self.kind != "user_table"

    @property
    def is_flat(self) -> bool:
        return self.kind == "identity" or (self.is_conformal and self.amplitude == 0.0
                                           and self.kind != "custom_conformal")

    def conformal_factor_of_rsq(self, r_sq: np.ndarray) -> np.ndarray:
        """c as a function of |x|^2 (conformal kinds only)."""
        r_sq = np.asarray(r_sq, dtype=float)
        if self.kind == "identity":
            return np.ones_like(r_sq)
        if self.kind == "conformal_bump":
            return 1.0 + self.amplitude * np.exp(-r_sq / self.width**2)
        if self.kind == "conformal_ring":
            return 1.0 + self.amplitude * np.exp(
                -((r_sq - self.ring_radius**2) ** 2) / self.width**4
            )
        if self.kind == "custom_conformal":
            return np.asarray(self.profile(r_sq), dtype=float)
        raise ValueError("user_table metric has no conformal factor")

    def conformal_factor(self, x: np.ndarray) -> np.ndarray:
        """c(x) for points of shape (..., d)."""
        return self.conformal_factor_of_rsq(np.sum(np.asarray(x, dtype=float) ** 2, axis=-1))

    def conformal_gradient(self, x: np.ndarray) -> np.ndarray:
        """grad c at points of shape (..., d); analytic for built-in kinds."""
        return self.conformal_value_and_gradient(x)[1]

    def conformal_value_and_gradient(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(c, grad c) sharing the profile evaluation (flow hot path)."""
        x = np.asarray(x, dtype=float)
        r_sq = np.sum(x**2, axis=-1, keepdims=True)
        if self.kind == "identity":
            return np.ones(x.shape[:-1]), np.zeros_like(x)
        if self.kind == "conformal_bump":
            bump = self.amplitude * np.exp(-r_sq / self.width**2)
            return 1.0 + bump[..., 0], -2.0 * x * bump / self.width**2
        if self.kind == "conformal_ring":
            dev = r_sq - self.ring_radius**2
            bump = self.amplitude * np.exp(-(dev**2) / self.width**4)
            return 1.0 + bump[..., 0], -4.0 * dev * x * bump / self.width**4
        if self.kind == "custom_conformal":
            # d c/d(r^2) by central differences, then chain rule
            eps = 1e-6 * (1.0 + np.abs(r_sq))
            dcd = (self.conformal_factor_of_rsq(r_sq + eps)
                   - self.conformal_factor_of_rsq(r_sq - eps)) / (2.0 * eps)
            return self.conformal_factor_of_rsq(r_sq[..., 0]), 2.0 * x * dcd
        raise ValueError("user_table metric has no off-grid gradient")

    def support_radius(self, tol: float = 1e-8, r_max: float = 100.0) -> float:
        """Radius beyond which |c - 1| stays below tol (conformal kinds)."""
        if self.kind == "identity" or (self.is_conformal and self.amplitude == 0.0
                                       and self.kind != "custom_conformal"):
            return 0.0
        rs = np.linspace(0.0, r_max, 4001)
        dev = np.abs(self.conformal_factor_of_rsq(rs**2) - 1.0)
        nonzero = np.nonzero(dev > tol)[0]
        return float(rs[nonzero[-1]]) if nonzero.size else 0.0


def identity_metric(rho: float = 1.0) -> MetricSpec:
    return MetricSpec(kind="identity", rho=rho)


@dataclass(frozen=True)
class DampingSpec:
    """Nonnegative absorption coefficient a(x) and the damping order alpha.

    Built-in profiles:
      none        a = 0
      gaussian    a = amplitude * exp(-|x - center|^2 / width^2)
      ring        a = amplitude * exp(-(|x|^2 - ring_radius^2)^2 / width^4)
      core_shell  radially absorbing shell plus a central core,
                  a = amplitude * exp(-(|x| - ring_radius)^2 / width^2)
                    + core_amplitude * exp(-|x|^2 / core_width^2)
                  (the shell term has a numerically negligible kink at the
                  origin of size exp(-(ring_radius/width)^2))
      custom      a supplied as a callable on points of shape (..., d)
    """

    kind: str = "none"
    alpha: float = 1.0
    rho: float = 1.0
    amplitude: float = 0.0
    width: float = 1.0
    center: tuple[float, ...] | float = 0.0
    ring_radius: float = 0.0
    core_amplitude: float = 0.0
    core_width: float = 1.0
    profile: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.kind not in DAMPING_KINDS:
            raise ValueError(f"unknown damping kind {self.kind!r}; choose from {DAMPING_KINDS}")
        if not 0.0 <= self.alpha < 2.0:
            raise ValueError(f"damping order alpha must lie in [0, 2), got {self.alpha}")
        if self.kind == "custom" and self.profile is None:
            raise ValueError("custom damping requires a profile callable")

    @property
    def is_zero(self) -> bool:
        if self.kind == "none":
            return True
        if self.kind == "custom":
            return False
        if self.kind == "core_shell":
            return self.amplitude == 0.0 and self.core_amplitude == 0.0
        return self.amplitude == 0.0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """a at points of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            return np.zeros(x.shape[:-1])
        if self.kind == "gaussian":
            c = np.broadcast_to(np.asarray(self.center, dtype=float), (x.shape[-1],))
            r_sq = np.sum((x - c) ** 2, axis=-1)
            return self.amplitude * np.exp(-r_sq / self.width**2)
        if self.kind == "ring":
            r_sq = np.sum(x**2, axis=-1)
            dev = r_sq - self.ring_radius**2
            return self.amplitude * np.exp(-(dev**2) / self.width**4)
        if self.kind == "core_shell":
            r = np.sqrt(np.sum(x**2, axis=-1))
            shell = self.amplitude * np.exp(-((r - self.ring_radius) ** 2) / self.width**2)
            core = self.core_amplitude * np.exp(-(r**2) / self.core_width**2)
            return shell + core
        return np.asarray(self.profile(x), dtype=float)

    def on_grid(self, grid: Grid) -> np.ndarray:
        pts = np.moveaxis(grid.coord_mesh, 0, -1)
        return self.evaluate(pts)


def no_damping(alpha: float = 1.0) -> DampingSpec:
    return DampingSpec(kind="none", alpha=alpha)


def _kappa(dim: int) -> int:
    return dim // 2 if dim % 2 == 0 else (dim + 1) // 2


@dataclass
class DampedOperator:
    """Application closures for the kinetic part, the damping sandwich, and
    their dissipative combination, with the model parameters attached."""

    grid: Grid
    metric: MetricSpec
    damping: DampingSpec
    w_choice: str = "unit"
    conformal_mesh: np.ndarray | None = None      # c(x) for conformal metrics
    metric_mesh: np.ndarray | None = None          # (*shape, d, d) for user_table
    weight_mesh: np.ndarray | None = None          # w(x); None means w = 1
    damping_mesh: np.ndarray = field(default=None, repr=False)
    b_coeffs: list[np.ndarray] | None = None
    audits: dict = field(default_factory=dict)

    bracket_alpha_mesh: np.ndarray = field(init=False, repr=False)
    bracket_half_alpha_mesh: np.ndarray = field(init=False, repr=False)
    _damping_w_mesh: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        xi_sq = self.grid.xi_sq_mesh
        self.bracket_alpha_mesh = (1.0 + xi_sq) ** (self.damping.alpha / 2.0)
        self.bracket_half_alpha_mesh = (1.0 + xi_sq) ** (self.damping.alpha / 4.0)
        # with a non-unit weight the damping coefficient absorbs sqrt(w) so
        # the sandwich stays self-adjoint in the weighted inner product
        if self.weight_mesh is None:
            self._damping_w_mesh = self.damping_mesh
        else:
            self._damping_w_mesh = self.damping_mesh * np.sqrt(self.weight_mesh)

    @property
    def alpha(self) -> float:
        return self.damping.alpha

    @property
    def alpha_tilde(self) -> float:
        return min(1.0, self.damping.alpha)

    @property
    def kappa(self) -> int:
        return _kappa(self.grid.dim)

    @property
    def has_damping(self) -> bool:
        return bool(np.any(self.damping_mesh > 0))

    # -- inner products -------------------------------------------------

    def weighted_inner(self, f: ComplexField, g: ComplexField) -> complex:
        """<f, g>_w = h^d * sum w f conj(g)."""
        w = 1.0 if self.weight_mesh is None else self.weight_mesh
        return complex(self.grid.quad_weight * np.sum(w * f.values * np.conj(g.values)))

    def weighted_norm_sq(self, f: ComplexField) -> float:
        w = 1.0 if self.weight_mesh is None else self.weight_mesh
        return float(self.grid.quad_weight * np.sum(w * np.abs(f.values) ** 2))

    # -- operator applications ------------------------------------------

    def _gradient(self, values: np.ndarray) -> list[np.ndarray]:
        spec = fftn(values)
        return [ifftn(self.grid.freq_mesh[j] * spec) for j in range(self.grid.dim)]

    def apply_p(self, f: ComplexField) -> ComplexField:
        """Divergence-form kinetic part (plus the optional first-order term)."""
        d = self.grid.dim
        if (
            self.conformal_mesh is None
            and self.metric_mesh is None
            and self.weight_mesh is None
            and self.b_coeffs is None
        ):
            # flat case collapses to the exact multiplier
            return ComplexField(f.grid, ifftn(self.grid.xi_sq_mesh * fftn(f.values)))
        grads = self._gradient(f.values)
        if self.metric_mesh is not None:
            fluxes = [
                sum(self.metric_mesh[..., j, k] * grads[k] for k in range(d)) for j in range(d)
            ]
        elif self.conformal_mesh is not None:
            fluxes = [self.conformal_mesh * grads[j] for j in range(d)]
        else:
            fluxes = grads
        if self.weight_mesh is not None:
            fluxes = [self.weight_mesh * v for v in fluxes]
        acc = np.zeros(self.grid.shape, dtype=np.complex128)
        for j in range(d):
            acc += self.grid.freq_mesh[j] * fftn(fluxes[j])
        out = ifftn(acc)
        if self.weight_mesh is not None:
            out = out / self.weight_mesh
        if self.b_coeffs is not None:
            for j in range(d):
                out = out + self.b_coeffs[j] * grads[j]
        return ComplexField(f.grid, out)

    def apply_b_alpha(self, f: ComplexField) -> ComplexField:
        """Damping sandwich a <D>^alpha (a .), Hermitian nonnegative."""
        a = self._damping_w_mesh
        out = a * ifftn(self.bracket_alpha_mesh * fftn(a * f.values))
        if self.weight_mesh is not None:
            out = out / self.weight_mesh
        return ComplexField(f.grid, out)

    def apply_h(self, f: ComplexField) -> ComplexField:
        """Full dissipative operator: kinetic part minus i times the damping."""
        p = self.apply_p(f)
        if self.damping.is_zero:
            return p
        return ComplexField(f.grid, p.values - 1j * self.apply_b_alpha(f).values)

    def apply_h_adjoint(self, f: ComplexField) -> ComplexField:
        """Adjoint in the weighted inner product: kinetic part plus i damping."""
        p = self.apply_p(f)
        if self.damping.is_zero:
            return p
        return ComplexField(f.grid, p.values + 1j * self.apply_b_alpha(f).values)

    def apply_free(self, f: ComplexField) -> ComplexField:
        """The flat comparison operator (positive Laplacian as a multiplier)."""
        return ComplexField(f.grid, ifftn(self.grid.xi_sq_mesh * fftn(f.values)))

    def apply_h_remainder(self, f: ComplexField) -> ComplexField:
        """apply_h minus the flat multiplier part (what the splitting scheme
        advances with a small Krylov exponential), formed directly from the
        metric deviation so the flat part is never computed and subtracted."""
        grid = self.grid
        d = grid.dim
        flat_kinetic = (
            self.conformal_mesh is None
            and self.metric_mesh is None
            and self.weight_mesh is None
            and self.b_coeffs is None
        )
        if flat_kinetic:
            if self.damping.is_zero:
                return ComplexField(f.grid, np.zeros(grid.shape, dtype=np.complex128))
            return ComplexField(f.grid, -1j * self.apply_b_alpha(f).values)
        spec = fftn(f.values)
        grads = [ifftn(grid.freq_mesh[j] * spec) for j in range(d)]
        if self.metric_mesh is not None:
            fluxes = [
                sum(self.metric_mesh[..., j, k] * grads[k] for k in range(d)) for j in range(d)
            ]
        elif self.conformal_mesh is not None:
            fluxes = [self.conformal_mesh * grads[j] for j in range(d)]
        else:
            fluxes = [g.copy() for g in grads]
        if self.weight_mesh is not None:
            fluxes = [self.weight_mesh * v for v in fluxes]
        acc = np.zeros(grid.shape, dtype=np.complex128)
        any_flux = False
        for j in range(d):
            dev = fluxes[j] - grads[j]
            if np.any(dev):
                acc += grid.freq_mesh[j] * fftn(dev)
                any_flux = True
        out = ifftn(acc) if any_flux else np.zeros(grid.shape, dtype=np.complex128)
        if self.weight_mesh is not None:
            # (1/w) D.(w G D f) - (-Lap f) = (1/w) D.((wG - I) D f) + (1/w - 1)(-Lap f)
            lap = ifftn(grid.xi_sq_mesh * spec)
            out = out / self.weight_mesh + (1.0 / self.weight_mesh - 1.0) * lap
        if self.b_coeffs is not None:
            for j in range(d):
                out = out + self.b_coeffs[j] * grads[j]
        if not self.damping.is_zero:
            out = out - 1j * self.apply_b_alpha(f).values
        return ComplexField(f.grid, out)

    @property
    def remainder_is_zero(self) -> bool:
        return (
            self.metric.is_flat
            and self.damping.is_zero
            and self.b_coeffs is None
            and self.weight_mesh is None
        )


def assemble(
    grid: Grid,
    metric: MetricSpec,
    damping: DampingSpec,
    w_choice: str = "unit",
    b_coeffs: list[np.ndarray] | None = None,
) -> DampedOperator:
    """Materialize the operator bundle on a grid, validating hypotheses.

    Raises AssemblyError for a non-SPD metric point or a negative damping
    value; decay-rate hypotheses are audited by sampling and attached to
    the returned bundle as reported constants, not hard failures.
    """
    if w_choice not in ("unit", "beltrami"):
        raise ValueError(f"w_choice must be 'unit' or 'beltrami', got {w_choice!r}")
    audits: dict = {}
    pts = np.moveaxis(grid.coord_mesh, 0, -1)
    bracket = np.sqrt(1.0 + grid.x_sq_mesh)

    conformal_mesh = None
    metric_mesh = None
    if metric.is_conformal:
        c = metric.conformal_factor_of_rsq(grid.x_sq_mesh)
        if np.any(c <= 0):
            idx = np.unravel_index(int(np.argmin(c)), grid.shape)
            coord = grid.coord_mesh[(slice(None),) + idx]
            raise AssemblyError(
                f"metric is not positive definite at x = {np.array2string(coord)}: c = {c[idx]:.3g}"
            )
        if not metric.is_flat:
            conformal_mesh = c
        dev = np.abs(c - 1.0)
        audits["long_range_constant"] = float(np.max(dev * bracket**metric.rho))
    else:
        table = np.asarray(metric.table, dtype=float)
        if table.shape != grid.shape + (grid.dim, grid.dim):
            raise AssemblyError(
                f"metric table shape {table.shape} does not match grid {grid.shape + (grid.dim, grid.dim)}"
            )
        sym_dev = np.max(np.abs(table - np.swapaxes(table, -1, -2)))
        if sym_dev > 1e-12:
            raise AssemblyError(f"metric table is not symmetric (max deviation {sym_dev:.3g})")
        try:
            np.linalg.cholesky(table)
        except np.linalg.LinAlgError:
            eigs = np.linalg.eigvalsh(table)
            bad = np.unravel_index(int(np.argmin(eigs[..., 0])), grid.shape)
            coord = grid.coord_mesh[(slice(None),) + bad]
            raise AssemblyError(
                f"metric is not positive definite at x = {np.array2string(coord)}"
            ) from None
        metric_mesh = table
        dev = np.max(np.abs(table - np.eye(grid.dim)), axis=(-1, -2))
        audits["long_range_constant"] = float(np.max(dev * bracket**metric.rho))

    a_mesh = damping.on_grid(grid)
    if np.any(a_mesh < 0):
        idx = np.unravel_index(int(np.argmin(a_mesh)), grid.shape)
        coord = grid.coord_mesh[(slice(None),) + idx]
        raise AssemblyError(
            f"damping coefficient is negative at x = {np.array2string(coord)}: a = {a_mesh[idx]:.3g}"
        )
    audits["short_range_constant"] = float(np.max(a_mesh * bracket ** (1.0 + damping.rho)))

    weight_mesh = None
    if w_choice == "beltrami":
        if metric_mesh is not None:
            det_g = 1.0 / np.linalg.det(metric_mesh)
        else:
            c = metric.conformal_factor_of_rsq(grid.x_sq_mesh) if conformal_mesh is None else conformal_mesh
            det_g = c ** (-grid.dim)
        w = np.sqrt(det_g)
        boundary = grid.boundary_band_mask(0.05)
        audits["beltrami_unit_volume_boundary_dev"] = float(np.max(np.abs(w[boundary] - 1.0)))
        if not np.allclose(w, 1.0):
            weight_mesh = w

    b_meshes = None
    if b_coeffs is not None:
        b_meshes = [np.asarray(b, dtype=float) for b in b_coeffs]
        if len(b_meshes) != grid.dim or any(b.shape != grid.shape for b in b_meshes):
            raise AssemblyError("b_coeffs must provide one grid-shaped field per axis")
        if all(np.allclose(b, 0.0) for b in b_meshes):
            b_meshes = None

    op = DampedOperator(
        grid=grid,
        metric=metric,
        damping=damping,
        w_choice=w_choice,
        conformal_mesh=conformal_mesh,
        metric_mesh=metric_mesh,
        weight_mesh=weight_mesh,
        damping_mesh=a_mesh,
        b_coeffs=b_meshes,
        audits=audits,
    )

    if b_meshes is not None:
        dev = _symmetry_defect(op, seed=0, n_samples=4)
        if dev > 1e-10:
            raise AssemblyError(
                f"first-order term breaks the symmetry of the kinetic part "
                f"(defect {dev:.3g} > 1e-10); choose coefficients that keep it self-adjoint"
            )
        audits["first_order_symmetry_defect"] = dev
    return op


def _symmetry_defect(op: DampedOperator, seed: int, n_samples: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        f = random_field(op.grid, rng, normalized=True)
        g = random_field(op.grid, rng, normalized=True)
        lhs = op.weighted_inner(op.apply_p(f), g)
        rhs = np.conj(op.weighted_inner(op.apply_p(g), f))
        worst = max(worst, abs(lhs - rhs))
    return worst


@dataclass
class DissipativityReport:
    n_samples: int
    im_max: float
    re_min: float
    tolerance: float
    passed: bool

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"dissipativity over {self.n_samples} fields: max Im<Hf,f> = {self.im_max:.3e}, "
            f"min Re<Hf,f> = {self.re_min:.3e} (tol {self.tolerance:.1e}) -> {status}"
        )


def dissipativity_report(
    op: DampedOperator, n_samples: int, seed: int, tolerance: float = 1e-10
) -> DissipativityReport:
    """Sample Im<Hf,f> <= 0 and Re<Hf,f> >= 0 on random normalized fields."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    im_max = -np.inf
    re_min = np.inf
    for _ in range(n_samples):
        f = random_field(op.grid, rng)
        f.values /= np.sqrt(op.weighted_norm_sq(f))
        quad = op.weighted_inner(op.apply_h(f), f)
        im_max = max(im_max, quad.imag)
        re_min = min(re_min, quad.real)
    passed = im_max <= tolerance and re_min >= -tolerance
    return DissipativityReport(n_samples, float(im_max), float(re_min), tolerance, passed)
