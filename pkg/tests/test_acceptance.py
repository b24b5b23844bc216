"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line. Tolerances are pinned here, not configurable."""

import json
import warnings

import numpy as np
import pytest

from dslab.cli import main
from dslab.experiments import builtin_scenarios, run_scenario, run_structural_suite
from dslab.physical_model import DampingSpec, MetricSpec, assemble
from dslab.resolvent_engine import (
    ResolventQuery,
    perturbation_expansion_check,
    solve,
    weighted_norm,
)
from dslab.spectral_core import (
    DilationParams,
    dilate,
    dilation_lp_factor,
    gaussian_packet,
    make_grid,
    random_field,
)

from helpers import dense_multiplier_1d, dense_operator_matrix


def _stamp(num: int, title: str, ok: bool) -> None:
    print(f"ACCEPTANCE {num} ({title}): {'PASS' if ok else 'FAIL'}", flush=True)


def test_criterion_1_structural_suite():
    report, _ = run_structural_suite(seed=42)
    by_name = {v["name"]: v["status"] for v in report.verdicts}
    ok = (
        by_name["dissipativity_flat_free"] == "pass"
        and by_name["dissipativity_bump_damped"] == "pass"
        and by_name["accretivity_flat_free"] == "pass"
        and by_name["accretivity_bump_damped"] == "pass"
        and by_name["quadratic_estimate"] == "pass"
        and by_name["trivial_resolvent_bound"] == "pass"
    )
    _stamp(1, "structural suite", ok)
    assert ok, report.to_json()


def test_criterion_2_oracle_equivalence():
    grid = make_grid(1, 64, 8.0)
    op = assemble(
        grid,
        MetricSpec(kind="conformal_bump", amplitude=0.25, width=1.5),
        DampingSpec(kind="gaussian", alpha=1.0, amplitude=1.0, width=1.5),
    )
    mat = dense_operator_matrix(op.apply_h, grid)
    eye = np.eye(grid.n_points)

    lu_ok = True
    rng = np.random.default_rng(0)
    for z in (0.8 + 0.3j, 0.15 + 0.6j, 2.0 + 0.1j):
        f = random_field(grid, rng, normalized=True)
        u = solve(op, z, f, tol=1e-11)
        dense = np.linalg.solve(mat - z * eye, f.values.ravel())
        rel = np.linalg.norm(u.values.ravel() - dense) / np.linalg.norm(dense)
        lu_ok = lu_ok and rel < 1e-8

    svd_ok = True
    worst = 0.0
    for i in range(20):
        z = complex(rng.uniform(0.2, 2.0), rng.uniform(0.1, 1.0))
        n_pow = int(rng.integers(0, 3))
        dl, dr = float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
        bl = float(rng.uniform(0, 1))
        br = float(rng.uniform(0, 2.0 - bl))
        q = ResolventQuery(z=z, n=n_pow, delta_left=dl, delta_right=dr,
                           deriv_left=bl, deriv_right=br, solver_tol=1e-10)
        res = weighted_norm(op, q, seed=i)
        r = np.linalg.matrix_power(np.linalg.inv(mat - z * eye), n_pow + 1)
        sandwich = (
            np.diag(grid.japanese_bracket(-dl).ravel())
            @ dense_multiplier_1d(grid, (1 + grid.axis_freqs**2) ** (bl / 2))
            @ r
            @ dense_multiplier_1d(grid, (1 + grid.axis_freqs**2) ** (br / 2))
            @ np.diag(grid.japanese_bracket(-dr).ravel())
        )
        oracle = np.linalg.norm(sandwich, 2)
        rel = abs(res.norm_estimate - oracle) / oracle
        worst = max(worst, rel)
        svd_ok = svd_ok and rel < 1e-3

    pert_ok = all(
        perturbation_expansion_check(m=m, size=8, seed=100 + m).passed for m in (0, 1, 2)
    )
    ok = lu_ok and svd_ok and pert_ok
    _stamp(2, "oracle equivalence", ok)
    assert lu_ok, "matrix-free solve disagrees with dense LU beyond 1e-8"
    assert svd_ok, f"weighted norm vs dense SVD worst rel err {worst:.2e} >= 1e-3"
    assert pert_ok, "perturbation expansion failed at 1e-10"


def test_criterion_3_dilation_laws():
    grid = make_grid(1, 256, 8.0)
    probe = gaussian_packet(grid, width=1.0)
    ok = True
    for scale in (2.0, 4.0):
        theta = float(np.log(scale))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = dilate(probe, DilationParams(theta, 1))
        for p in (1.0, 2.0, np.inf):
            factor = dilation_lp_factor(theta, 1, p)
            err = abs(out.lp_norm(p) - factor * probe.lp_norm(p)) / probe.lp_norm(p)
            ok = ok and err <= 1e-12
    _stamp(3, "dilation norm laws", ok)
    assert ok


def test_criterion_4_local_energy_decay():
    lib = builtin_scenarios()
    free_rep, _ = run_scenario(lib["free3d-decay"], seed=42)
    free_status = free_rep.verdicts[0]["status"]
    slope = [m for m in free_rep.measurements if m["name"] == "decay_slope"][0]["value"]
    free_ok = free_status == "pass" and -1.7 <= slope <= -1.3

    bump_rep, _ = run_scenario(lib["bump3d-decay-damped"], seed=42)
    bump_status = bump_rep.verdicts[0]["status"]
    if bump_status == "undecided":
        detail = bump_rep.verdicts[0]["detail"]
        bump_ok = ("boundary" in detail or "window" in detail) and (
            "t_wrap" in bump_rep.diagnostics
        )
    else:
        bump_ok = bump_status == "pass"
    ok = free_ok and bump_ok
    _stamp(4, "local energy decay", ok)
    assert free_ok, free_rep.to_json()
    assert bump_ok, bump_rep.to_json()


def test_criterion_5_smoothing_stabilization():
    lib = builtin_scenarios()
    rep, _ = run_scenario(lib["smooth3d-damped"], seed=42)
    changes = [m for m in rep.measurements if m["name"] == "relative_change_on_doubling"]
    values = changes[0]["value"]
    ok = len(values) == 10 and max(values) < 0.05 and rep.overall == "pass"
    _stamp(5, "smoothing stabilization", ok)
    assert ok, rep.to_json()


def test_criterion_6_resolvent_regimes():
    lib = builtin_scenarios()
    high_rep, _ = run_scenario(lib["high2d-damped"], seed=42)
    slope = [m for m in high_rep.measurements if m["name"] == "fitted_slope"][0]["value"]
    high_ok = high_rep.overall == "pass" and -0.65 <= slope <= -0.35

    low_rep, _ = run_scenario(lib["sharplow2d-damped"], seed=42)
    ratio = [m for m in low_rep.measurements if m["name"] == "norm_ratio"][0]["value"]
    low_ok = low_rep.overall == "pass" and ratio < 10.0
    ok = high_ok and low_ok
    _stamp(6, "resolvent frequency regimes", ok)
    assert high_ok, high_rep.to_json()
    assert low_ok, low_rep.to_json()


def test_criterion_7_classical_flow():
    lib = builtin_scenarios()
    rep, _ = run_scenario(lib["flow-trapping"], seed=42)
    by_name = {v["name"]: v["status"] for v in rep.verdicts}
    ok = (
        by_name["flat_flow_exact"] == "pass"
        and by_name["energy_conservation"] == "pass"
        and by_name["trapped_at_horizon"] == "pass"
        and by_name["damping_condition_as_constructed"] == "pass"
        and by_name["escape_inequality_fails_on_trapping_metric"] == "pass"
        and by_name["flat_escape_bracket"] == "pass"
    )
    _stamp(7, "classical flow", ok)
    assert ok, rep.to_json()


def test_criterion_8_determinism(tmp_path):
    outs = []
    for run in ("a", "b"):
        out_dir = tmp_path / run
        code = main([
            "--out", str(out_dir), "--seed", "42",
            "run", "builtin:inter1d-damped",
        ])
        assert code == 0
        outs.append({
            "report": (out_dir / "report.json").read_bytes(),
            "sweep": (out_dir / "sweep.csv").read_bytes(),
        })
    ok = outs[0]["report"] == outs[1]["report"] and outs[0]["sweep"] == outs[1]["sweep"]
    _stamp(8, "determinism", ok)
    assert ok
    report = json.loads(outs[0]["report"])
    assert report["overall"] == "pass"
