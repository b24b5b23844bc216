"""Hamiltonian flow of the metric symbol, trapping classification, the
damping (geometric control) condition, and the escape-function probe.

The flow of p(x, xi) = <G(x) xi, xi> is integrated with the implicit
midpoint rule (symmetric and symplectic), with an online conservation gate
|p(t) - p(0)| <= 1e-6 p(0) that halves the step up to four times before
declaring failure. All trapping verdicts are finite-horizon surrogates:
no finite computation certifies boundedness for all time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .physical_model import DampingSpec, MetricSpec

P_CONSERVATION_TOL = 1e-6
MAX_DT_HALVINGS = 4
FINITE_HORIZON_NOTE = (
    "finite-time surrogate: boundedness certified only up to the integration horizon"
)


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseSpacePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=float)))
        if self.x.shape != self.xi.shape:
            raise ValueError("x and xi must have the same dimension")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi))):
            raise ValueError("phase-space components must be finite")


@dataclass
class Trajectory:
    times: np.ndarray
    xs: np.ndarray
    xis: np.ndarray
    p_values: np.ndarray
    classification: str  # escaped | trapped_up_to_T | integrator_failure
    escape_time: float | None
    dt_used: float
    p_drift_max: float

    def write_csv(self, fh) -> None:
        d = self.xs.shape[1]
        cols = ["t"] + [f"x_{j + 1}" for j in range(d)] + [f"xi_{j + 1}" for j in range(d)] + ["p"]
        fh.write(",".join(cols) + "\n")
        for i in range(self.times.size):
            row = [repr(float(self.times[i]))]
            row += [repr(float(v)) for v in self.xs[i]]
            row += [repr(float(v)) for v in self.xis[i]]
            row.append(repr(float(self.p_values[i])))
            fh.write(",".join(row) + "\n")


def _require_conformal(metric: MetricSpec, what: str) -> None:
    if not metric.is_conformal:
        raise ValueError(
            f"{what} needs off-grid metric values; tabulated metrics only exist "
            "on grid points (use a built-in conformal kind)"
        )


def symbol_value(metric: MetricSpec, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """p(x, xi) = c(x) |xi|^2 for conformal metrics (batched over leading axes)."""
    _require_conformal(metric, "the classical symbol")
    return metric.conformal_factor(x) * np.sum(np.asarray(xi) ** 2, axis=-1)


def _hamilton_rhs(metric: MetricSpec, x: np.ndarray, xi: np.ndarray):
    """(dx/dt, dxi/dt) = (grad_xi p, -grad_x p)."""
    c, grad_c = metric.conformal_value_and_gradient(x)
    xi_sq = np.sum(xi**2, axis=-1, keepdims=True)
    return 2.0 * c[..., None] * xi, -xi_sq * grad_c


def _midpoint_step(metric, x, xi, dt):
    """One implicit-midpoint step, solved by fixed-point iteration."""
    vx, vxi = _hamilton_rhs(metric, x, xi)
    x_new = x + dt * vx
    xi_new = xi + dt * vxi
    for _ in range(30):
        mx = 0.5 * (x + x_new)
        mxi = 0.5 * (xi + xi_new)
        vx, vxi = _hamilton_rhs(metric, mx, mxi)
        x_next = x + dt * vx
        xi_next = xi + dt * vxi
        delta = max(
            np.max(np.abs(x_next - x_new)) / (1.0 + np.max(np.abs(x_next))),
            np.max(np.abs(xi_next - xi_new)) / (1.0 + np.max(np.abs(xi_next))),
        )
        x_new, xi_new = x_next, xi_next
        if delta < 1e-13:
            return x_new, xi_new
    raise FlowError(f"midpoint fixed point stalled at dt = {dt:.3e}")


@dataclass
class _BatchRun:
    """Online statistics of one integration direction for a sample batch."""

    rec_times: list
    rec_xs: list
    rec_xis: list
    rec_ps: list
    p_drift_max: np.ndarray
    escape_time: np.ndarray       # nan where not escaped
    damping_hit_time: np.ndarray  # nan where the damping region was never met
    a_max: np.ndarray


def _march_batch(
    metric: MetricSpec,
    x0: np.ndarray,
    xi0: np.ndarray,
    t_max: float,
    dt: float,
    direction: int,
    r_escape: float,
    record_stride: int,
    damping: DampingSpec | None = None,
    a_threshold: float = 0.0,
) -> _BatchRun:
    m = x0.shape[0]
    x = x0.copy()
    xi = xi0.copy()
    p0 = symbol_value(metric, x, xi)
    n_steps = int(round(t_max / dt))
    sdt = direction * dt
    run = _BatchRun(
        rec_times=[0.0],
        rec_xs=[x.copy()],
        rec_xis=[xi.copy()],
        rec_ps=[p0.copy()],
        p_drift_max=np.zeros(m),
        escape_time=np.full(m, np.nan),
        damping_hit_time=np.full(m, np.nan),
        a_max=np.zeros(m),
    )
    if damping is not None:
        a0 = damping.evaluate(x)
        run.a_max = a0.copy()
        hit0 = a0 > a_threshold
        run.damping_hit_time[hit0] = 0.0
    for k in range(1, n_steps + 1):
        x, xi = _midpoint_step(metric, x, xi, sdt)
        t = k * sdt
        p = symbol_value(metric, x, xi)
        run.p_drift_max = np.maximum(run.p_drift_max, np.abs(p - p0) / p0)
        vx, _ = _hamilton_rhs(metric, x, xi)
        radial = np.sum(x * vx, axis=-1) * direction
        out = (np.linalg.norm(x, axis=-1) > r_escape) & (radial > 0)
        newly = out & np.isnan(run.escape_time)
        run.escape_time[newly] = t
        if damping is not None:
            a = damping.evaluate(x)
            run.a_max = np.maximum(run.a_max, a)
            hit = (a > a_threshold) & np.isnan(run.damping_hit_time)
            run.damping_hit_time[hit] = t
        if k % record_stride == 0 or k == n_steps:
            run.rec_times.append(t)
            run.rec_xs.append(x.copy())
            run.rec_xis.append(xi.copy())
            run.rec_ps.append(p.copy())
    return run


def default_escape_radius(metric: MetricSpec) -> float:
    """A radius safely beyond the metric perturbation support."""
    return metric.support_radius() + 2.0


def flow(
    metric: MetricSpec,
    w0: PhaseSpacePoint,
    t_max: float,
    dt: float,
    r_escape: float | None = None,
    record_stride: int | None = None,
    damping: DampingSpec | None = None,
    a_threshold: float = 0.0,
) -> Trajectory:
    """Integrate the geodesic flow through w0 over t in [-t_max, t_max].

    The step is halved (up to four times) until the energy conservation
    gate passes; a gate failure after all halvings yields a trajectory
    classified as integrator_failure.
    """
    _require_conformal(metric, "the geodesic flow")
    p0 = float(symbol_value(metric, w0.x[None], w0.xi[None])[0])
    if not p0 > 0:
        raise ValueError("initial point must satisfy p(w0) > 0")
    if r_escape is None:
        r_escape = default_escape_radius(metric)
    x0 = w0.x[None].astype(float)
    xi0 = w0.xi[None].astype(float)

    attempt_dt = dt
    for _ in range(MAX_DT_HALVINGS + 1):
        if record_stride is None:
            n_steps = int(round(t_max / attempt_dt))
            stride = max(1, n_steps // 10000)
        else:
            stride = record_stride
        try:
            fwd = _march_batch(metric, x0, xi0, t_max, attempt_dt, +1, r_escape, stride,
                               damping, a_threshold)
            bwd = _march_batch(metric, x0, xi0, t_max, attempt_dt, -1, r_escape, stride,
                               damping, a_threshold)
        except FlowError:
            attempt_dt /= 2.0
            continue
        drift = max(float(fwd.p_drift_max[0]), float(bwd.p_drift_max[0]))
        if drift <= P_CONSERVATION_TOL:
            break
        attempt_dt /= 2.0
    else:
        return Trajectory(
            times=np.array([0.0]),
            xs=x0.copy(),
            xis=xi0.copy(),
            p_values=np.array([p0]),
            classification="integrator_failure",
            escape_time=None,
            dt_used=attempt_dt,
            p_drift_max=float("inf"),
        )

    # backward times are recorded as negative values already
    times = np.concatenate([np.asarray(bwd.rec_times)[::-1][:-1], np.asarray(fwd.rec_times)])
    xs = np.concatenate([np.asarray(bwd.rec_xs)[::-1][:-1, 0], np.asarray(fwd.rec_xs)[:, 0]])
    xis = np.concatenate([np.asarray(bwd.rec_xis)[::-1][:-1, 0], np.asarray(fwd.rec_xis)[:, 0]])
    ps = np.concatenate([np.asarray(bwd.rec_ps)[::-1][:-1, 0], np.asarray(fwd.rec_ps)[:, 0]])

    esc_f = fwd.escape_time[0]
    esc_b = bwd.escape_time[0]
    if np.isnan(esc_f) and np.isnan(esc_b):
        classification = "trapped_up_to_T"
        escape_time = None
    else:
        classification = "escaped"
        candidates = [t for t in (esc_f, esc_b) if not np.isnan(t)]
        escape_time = min(candidates, key=abs)
    return Trajectory(
        times=times,
        xs=xs,
        xis=xis,
        p_values=ps,
        classification=classification,
        escape_time=escape_time,
        dt_used=attempt_dt,
        p_drift_max=drift,
    )


def classify_trapped(
    metric: MetricSpec, w0: PhaseSpacePoint, t_max: float, r_escape: float, dt: float = 1e-3
) -> str:
    """Finite-horizon trapping surrogate: escaped iff the orbit leaves the
    escape radius moving outward in either time direction within t_max."""
    if r_escape < metric.support_radius():
        raise ValueError(
            f"r_escape = {r_escape} lies inside the metric perturbation "
            f"(support radius {metric.support_radius():.2f})"
        )
    traj = flow(metric, w0, t_max, dt, r_escape=r_escape)
    return traj.classification


def rescale_to_unit_energy(metric: MetricSpec, w: PhaseSpacePoint) -> PhaseSpacePoint:
    p = float(symbol_value(metric, w.x[None], w.xi[None])[0])
    if not p > 0:
        raise ValueError("cannot rescale a point with p <= 0")
    return PhaseSpacePoint(w.x, w.xi / np.sqrt(p))


def sample_energy_shell(
    metric: MetricSpec, n_samples: int, radius: float, seed: int, dim: int = 2
) -> list[PhaseSpacePoint]:
    """Uniform positions in the ball |x| <= radius with unit-energy momenta."""
    _require_conformal(metric, "energy-shell sampling")
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n_samples:
        x = rng.uniform(-radius, radius, size=dim)
        if np.linalg.norm(x) > radius:
            continue
        xi = rng.standard_normal(dim)
        if np.linalg.norm(xi) < 1e-12:
            continue
        pts.append(rescale_to_unit_energy(metric, PhaseSpacePoint(x, xi)))
    return pts


@dataclass
class GccPointReport:
    point: PhaseSpacePoint
    classification: str
    status: str              # satisfied | violated | escaped | undecided
    damping_hit_time: float | None
    a_max_on_path: float


@dataclass
class GccReport:
    points: list[GccPointReport]
    verdict: str             # satisfied | violated | vacuous | undecided
    t_max: float
    a_threshold: float
    note: str

    @property
    def n_trapped(self) -> int:
        return sum(1 for p in self.points if p.classification == "trapped_up_to_T")


def check_damping_condition(
    metric: MetricSpec,
    damping: DampingSpec,
    sample: Sequence[PhaseSpacePoint],
    t_max: float,
    a_threshold: float,
    dt: float = 1e-3,
    r_escape: float | None = None,
) -> GccReport:
    """Sampled geometric control: every trapped sample must meet the
    damping region {a > a_threshold} within the horizon.

    Verdicts quantify only over the supplied samples; the report says so.
    """
    if r_escape is None:
        r_escape = default_escape_radius(metric)
    normalized = [rescale_to_unit_energy(metric, w) for w in sample]
    x0 = np.stack([w.x for w in normalized])
    xi0 = np.stack([w.xi for w in normalized])

    attempt_dt = dt
    for _ in range(MAX_DT_HALVINGS + 1):
        n_steps = int(round(t_max / attempt_dt))
        stride = max(1, n_steps // 2000)
        fwd = _march_batch(metric, x0, xi0, t_max, attempt_dt, +1, r_escape, stride,
                           damping, a_threshold)
        bwd = _march_batch(metric, x0, xi0, t_max, attempt_dt, -1, r_escape, stride,
                           damping, a_threshold)
        drift = max(float(np.max(fwd.p_drift_max)), float(np.max(bwd.p_drift_max)))
        if drift <= P_CONSERVATION_TOL:
            break
        attempt_dt /= 2.0

    points: list[GccPointReport] = []
    for i, w in enumerate(normalized):
        escaped = not (np.isnan(fwd.escape_time[i]) and np.isnan(bwd.escape_time[i]))
        failed = drift > P_CONSERVATION_TOL
        hit_f, hit_b = fwd.damping_hit_time[i], bwd.damping_hit_time[i]
        hit = None
        if not np.isnan(hit_f):
            hit = float(hit_f)
        elif not np.isnan(hit_b):
            hit = float(hit_b)
        a_max = float(max(fwd.a_max[i], bwd.a_max[i]))
        if failed:
            cls, status = "integrator_failure", "undecided"
        elif escaped:
            cls, status = "escaped", "escaped"
        elif hit is not None:
            cls, status = "trapped_up_to_T", "satisfied"
        else:
            cls, status = "trapped_up_to_T", "violated"
        points.append(GccPointReport(w, cls, status, hit, a_max))

    statuses = [p.status for p in points]
    if any(s == "undecided" for s in statuses):
        verdict = "undecided"
    elif all(s == "escaped" for s in statuses):
        verdict = "vacuous"
    elif any(s == "violated" for s in statuses):
        verdict = "violated"
    else:
        verdict = "satisfied"
    note = (
        f"sampled GCC over {len(points)} points ({FINITE_HORIZON_NOTE}); "
        "vacuous means no sampled point was trapped"
    )
    return GccReport(points=points, verdict=verdict, t_max=t_max, a_threshold=a_threshold, note=note)


# -- circular orbits of radial conformal metrics --------------------------


@dataclass(frozen=True)
class CircularOrbit:
    radius: float
    stability: str  # stable | unstable
    xi_magnitude: float  # tangential momentum giving p = 1


def find_circular_orbits(metric: MetricSpec, r_max: float = 30.0) -> list[CircularOrbit]:
    """Radii where the effective radial potential c(r)/r^2 is critical.

    A maximum hosts an unstable closed circular geodesic, a minimum a
    stable one; both are trapped orbits of the flow.
    """
    _require_conformal(metric, "circular-orbit search")

    def g(r: float) -> float:
        x = np.array([[r] + [0.0]])
        c = float(metric.conformal_factor(x)[0])
        dc = float(metric.conformal_gradient(x)[0, 0])
        return r * dc - 2.0 * c

    rs = np.linspace(0.05, r_max, 6000)
    vals = np.array([g(r) for r in rs])
    orbits = []
    for i in range(len(rs) - 1):
        if vals[i] == 0.0 or vals[i] * vals[i + 1] >= 0:
            continue
        r_star = brentq(g, rs[i], rs[i + 1], xtol=1e-12)
        eps = 1e-4 * r_star

        def v_eff(r: float) -> float:
            x = np.array([[r] + [0.0]])
            return float(metric.conformal_factor(x)[0]) / r**2

        curvature = v_eff(r_star + eps) - 2 * v_eff(r_star) + v_eff(r_star - eps)
        stability = "stable" if curvature > 0 else "unstable"
        c_star = float(metric.conformal_factor(np.array([[r_star, 0.0]]))[0])
        orbits.append(CircularOrbit(r_star, stability, 1.0 / np.sqrt(c_star)))
    return orbits


def circular_orbit_point(metric: MetricSpec, orbit: CircularOrbit, dim: int = 2) -> PhaseSpacePoint:
    """Launch point on the orbit: tangential momentum, unit energy."""
    x = np.zeros(dim)
    x[0] = orbit.radius
    xi = np.zeros(dim)
    xi[1] = orbit.xi_magnitude
    return PhaseSpacePoint(x, xi)


# -- escape-function probe -------------------------------------------------


@dataclass(frozen=True)
class PhaseSpaceSymbol:
    """Scalar symbol on phase space with optional analytic gradients;
    missing gradients fall back to central differences."""

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    grad_xi: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def gradients(self, x: np.ndarray, xi: np.ndarray, eps: float = 1e-6):
        if self.grad_x is not None and self.grad_xi is not None:
            return self.grad_x(x, xi), self.grad_xi(x, xi)
        d = x.shape[-1]
        gx = np.zeros_like(x)
        gxi = np.zeros_like(xi)
        for j in range(d):
            step = np.zeros(d)
            step[j] = eps
            gx[..., j] = (self.value(x + step, xi) - self.value(x - step, xi)) / (2 * eps)
            gxi[..., j] = (self.value(x, xi + step) - self.value(x, xi - step)) / (2 * eps)
        return gx, gxi


def radial_momentum_cutoff(r: np.ndarray, alpha: float) -> np.ndarray:
    """Smooth compactly supported bump in r = |xi|^2, maximal near r = 1 and
    dominated by r^(alpha/2) everywhere."""
    r = np.asarray(r, dtype=float)
    s = (r - 1.0) / 0.75
    out = np.zeros_like(r)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return 0.25 ** (alpha / 2.0) * out


@dataclass
class EscapeSymbolReport:
    min_value: float
    empirical_c0: float
    argmin_x: np.ndarray
    argmin_xi: np.ndarray
    positive: bool
    chi_audit_violation: float
    n_samples: int


def escape_symbol_probe(
    metric: MetricSpec,
    damping: DampingSpec,
    f_c: PhaseSpaceSymbol | None,
    beta: float,
    energy_window: tuple[float, float],
    n_samples: int,
    sample_radius: float = 8.0,
    seed: int = 0,
    dim: int = 2,
) -> EscapeSymbolReport:
    """Minimum over samples of {p, f0 + f_c} + beta*b on the energy shell,
    with f0 = x.xi and b = a(x)^2 chi(|xi|^2).

    Brackets use grad_xi p . grad_x f - grad_x p . grad_xi f; the flat
    metric with f_c = 0 gives exactly 2p. A nonpositive minimum flags that
    the escape inequality fails on the sampled region.
    """
    _require_conformal(metric, "the escape-symbol probe")
    rng = np.random.default_rng(seed)
    e_lo, e_hi = energy_window
    if not 0 < e_lo <= e_hi:
        raise ValueError("energy window must satisfy 0 < lo <= hi")

    xs = []
    while len(xs) < n_samples:
        cand = rng.uniform(-sample_radius, sample_radius, size=dim)
        if np.linalg.norm(cand) <= sample_radius:
            xs.append(cand)
    x = np.stack(xs)
    xi_dir = rng.standard_normal((n_samples, dim))
    xi_dir /= np.linalg.norm(xi_dir, axis=-1, keepdims=True)
    energies = rng.uniform(e_lo, e_hi, size=n_samples)
    p_raw = symbol_value(metric, x, xi_dir)
    xi = xi_dir * np.sqrt(energies / p_raw)[:, None]

    c = metric.conformal_factor(x)
    grad_c = metric.conformal_gradient(x)
    xi_sq = np.sum(xi**2, axis=-1)
    grad_xi_p = 2.0 * c[:, None] * xi
    grad_x_p = xi_sq[:, None] * grad_c

    # {p, f0} with f0 = x.xi: grad_x f0 = xi, grad_xi f0 = x
    bracket = np.sum(grad_xi_p * xi, axis=-1) - np.sum(grad_x_p * x, axis=-1)
    if f_c is not None:
        gx, gxi = f_c.gradients(x, xi)
        bracket += np.sum(grad_xi_p * gx, axis=-1) - np.sum(grad_x_p * gxi, axis=-1)

    chi = radial_momentum_cutoff(xi_sq, damping.alpha)
    chi_violation = float(np.max(chi - xi_sq ** (damping.alpha / 2.0)))
    a = damping.evaluate(x)
    total = bracket + beta * a**2 * chi

    i_min = int(np.argmin(total))
    min_value = float(total[i_min])
    return EscapeSymbolReport(
        min_value=min_value,
        empirical_c0=min_value / 3.0,
        argmin_x=x[i_min],
        argmin_xi=xi[i_min],
        positive=min_value > 0,
        chi_audit_violation=chi_violation,
        n_samples=n_samples,
    )
