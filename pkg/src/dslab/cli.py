"""Command-line entry point: scenario configs, experiment dispatch, and
deterministic report/CSV output.

Exit codes: 0 all verdicts pass, 1 any verdict fails, 2 undecided verdicts
only (no failures), 3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from ._alloc import tune_allocator
from .experiments import (
    EvolutionSettings,
    InitialData,
    ResolventSettings,
    Scenario,
    builtin_scenarios,
    run_scenario,
    write_decay_csv,
)
from .physical_model import DampingSpec, MetricSpec
from .resolvent_engine import ResolventQuery, frequency_sweep
from .spectral_core import set_fft_workers

DEFAULT_SEED = 42


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "id", "regime", "delta", "n_power", "sigma", "gamma", "ensemble",
    "fit_window", "slope_band", "w_choice",
}
_SECTION_KEYS = {
    "grid": {"dim", "n_per_axis", "half_length"},
    "metric": {"kind", "rho", "amplitude", "width", "ring_radius"},
    "damping": {"kind", "alpha", "rho", "amplitude", "width", "center",
                "ring_radius", "core_amplitude", "core_width"},
    "initial": {"kind", "center", "width", "momentum"},
    "evolution": {"dt", "t_max", "scheme", "record_every", "krylov_dim"},
    "resolvent": {"tol", "max_iters", "eta", "z_min", "z_max", "n_points"},
}


def scenario_to_config(s: Scenario) -> dict:
    """Flatten a scenario into the TOML section layout (round-trip exact)."""
    cfg: dict = {
        "id": s.id,
        "regime": s.regime,
        "delta": s.delta,
        "n_power": s.n_power,
        "sigma": s.sigma,
        "ensemble": s.ensemble,
        "w_choice": s.w_choice,
        "grid": {"dim": s.dim, "n_per_axis": s.n_per_axis, "half_length": s.half_length},
        "metric": {
            "kind": s.metric.kind,
            "rho": s.metric.rho,
            "amplitude": s.metric.amplitude,
            "width": s.metric.width,
            "ring_radius": s.metric.ring_radius,
        },
        "damping": {
            "kind": s.damping.kind,
            "alpha": s.damping.alpha,
            "rho": s.damping.rho,
            "amplitude": s.damping.amplitude,
            "width": s.damping.width,
            "center": np.atleast_1d(np.asarray(s.damping.center, dtype=float)).tolist(),
            "ring_radius": s.damping.ring_radius,
            "core_amplitude": s.damping.core_amplitude,
            "core_width": s.damping.core_width,
        },
        "initial": {
            "kind": s.initial.kind,
            "center": np.atleast_1d(np.asarray(s.initial.center, dtype=float)).tolist(),
            "width": s.initial.width,
            "momentum": np.atleast_1d(np.asarray(s.initial.momentum, dtype=float)).tolist(),
        },
        "evolution": {
            "dt": s.evolution.dt,
            "t_max": s.evolution.t_max,
            "scheme": s.evolution.scheme,
            "record_every": s.evolution.record_every,
            "krylov_dim": s.evolution.krylov_dim,
        },
        "resolvent": {
            "tol": s.resolvent.tol,
            "max_iters": s.resolvent.max_iters,
            "eta": s.resolvent.eta,
            "z_min": s.resolvent.z_min,
            "z_max": s.resolvent.z_max,
            "n_points": s.resolvent.n_points,
        },
    }
    if s.gamma is not None:
        cfg["gamma"] = s.gamma
    if s.fit_window is not None:
        cfg["fit_window"] = list(s.fit_window)
    if s.slope_band is not None:
        cfg["slope_band"] = list(s.slope_band)
    return cfg


def _check_keys(cfg: dict) -> None:
    for key, value in cfg.items():
        if isinstance(value, dict):
            if key not in _SECTION_KEYS:
                raise ConfigError(f"unknown config section [{key}]")
            extra = set(value) - _SECTION_KEYS[key]
            if extra:
                raise ConfigError(f"unknown key {sorted(extra)[0]!r} in section [{key}]")
        elif key not in _TOP_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}")


def _vec(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return float(value)


def config_to_scenario(cfg: dict) -> Scenario:
    _check_keys(cfg)
    grid = cfg.get("grid", {})
    metric = cfg.get("metric", {})
    damping = cfg.get("damping", {})
    initial = cfg.get("initial", {})
    evolution = cfg.get("evolution", {})
    resolvent = cfg.get("resolvent", {})
    try:
        return Scenario(
            id=str(cfg.get("id", "custom")),
            regime=str(cfg.get("regime", "structural")),
            dim=int(grid.get("dim", 1)),
            n_per_axis=int(grid.get("n_per_axis", 64)),
            half_length=float(grid.get("half_length", 8.0)),
            metric=MetricSpec(
                kind=str(metric.get("kind", "identity")),
                rho=float(metric.get("rho", 1.0)),
                amplitude=float(metric.get("amplitude", 0.0)),
                width=float(metric.get("width", 1.0)),
                ring_radius=float(metric.get("ring_radius", 0.0)),
            ),
            damping=DampingSpec(
                kind=str(damping.get("kind", "none")),
                alpha=float(damping.get("alpha", 1.0)),
                rho=float(damping.get("rho", 1.0)),
                amplitude=float(damping.get("amplitude", 0.0)),
                width=float(damping.get("width", 1.0)),
                center=_vec(damping.get("center", 0.0)),
                ring_radius=float(damping.get("ring_radius", 0.0)),
                core_amplitude=float(damping.get("core_amplitude", 0.0)),
                core_width=float(damping.get("core_width", 1.0)),
            ),
            w_choice=str(cfg.get("w_choice", "unit")),
            delta=float(cfg.get("delta", 1.0)),
            n_power=int(cfg.get("n_power", 0)),
            sigma=float(cfg.get("sigma", 0.0)),
            gamma=float(cfg["gamma"]) if "gamma" in cfg else None,
            initial=InitialData(
                kind=str(initial.get("kind", "gaussian")),
                center=_vec(initial.get("center", 0.0)),
                width=float(initial.get("width", 1.0)),
                momentum=_vec(initial.get("momentum", 0.0)),
            ),
            evolution=EvolutionSettings(
                dt=float(evolution.get("dt", 0.01)),
                t_max=float(evolution.get("t_max", 1.0)),
                scheme=str(evolution.get("scheme", "strang_split")),
                record_every=int(evolution.get("record_every", 1)),
                krylov_dim=int(evolution.get("krylov_dim", 10)),
            ),
            resolvent=ResolventSettings(
                tol=float(resolvent.get("tol", 1e-8)),
                max_iters=int(resolvent.get("max_iters", 4000)),
                eta=float(resolvent.get("eta", 1e-2)),
                z_min=float(resolvent.get("z_min", 4.0)),
                z_max=float(resolvent.get("z_max", 100.0)),
                n_points=int(resolvent.get("n_points", 25)),
            ),
            fit_window=tuple(cfg["fit_window"]) if "fit_window" in cfg else None,
            slope_band=tuple(cfg["slope_band"]) if "slope_band" in cfg else None,
            ensemble=int(cfg.get("ensemble", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    if isinstance(value, float):
        text = repr(float(value))
        return text if ("." in text or "e" in text or "inf" in text) else text + ".0"
    return str(value)


def emit_toml(cfg: dict) -> str:
    lines = []
    for key in sorted(k for k, v in cfg.items() if not isinstance(v, dict)):
        lines.append(f"{key} = {_toml_scalar(cfg[key])}")
    for section in sorted(k for k, v in cfg.items() if isinstance(v, dict)):
        lines.append("")
        lines.append(f"[{section}]")
        for key in sorted(cfg[section]):
            lines.append(f"{key} = {_toml_scalar(cfg[section][key])}")
    return "\n".join(lines) + "\n"


def _deep_merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_override(text: str) -> dict:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    node: dict = {}
    cursor = node
    parts = key.split(".")
    for part in parts[:-1]:
        cursor[part] = {}
        cursor = cursor[part]
    cursor[parts[-1]] = value
    return node


def load_scenario_config(ref: str) -> dict:
    """builtin:<name> or a TOML file path -> config dict (library defaults
    underneath, so partial files are complete scenarios)."""
    if ref.startswith("builtin:"):
        name = ref[len("builtin:"):]
        lib = builtin_scenarios()
        if name not in lib:
            raise ConfigError(
                f"unknown builtin scenario {name!r}; run list-scenarios for the library"
            )
        return scenario_to_config(lib[name])
    if not os.path.exists(ref):
        raise ConfigError(f"scenario file not found: {ref}")
    with open(ref, "rb") as fh:
        try:
            file_cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {ref}: {exc}") from exc
    _check_keys(file_cfg)
    base = scenario_to_config(Scenario(id="custom", regime=file_cfg.get("regime", "structural")))
    return _deep_merge(base, file_cfg)


def resolve_scenario(ref: str, overrides: list[str]) -> Scenario:
    cfg = load_scenario_config(ref)
    for text in overrides:
        cfg = _deep_merge(cfg, _parse_override(text))
    _check_keys(cfg)
    return config_to_scenario(cfg)


def _parse_z_spec(spec: str, eta: float) -> list[complex]:
    """'a:b:logstepR' (geometric with ratio R) or 'a:b:nK' (K log-spaced)."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"z range {spec!r} must look like 4:100:logstep1.3 or 4:100:n25")
    lo, hi = float(parts[0]), float(parts[1])
    if not 0 < lo <= hi:
        raise ConfigError(f"z range {spec!r} must have 0 < lo <= hi")
    tail = parts[2]
    if tail.startswith("logstep"):
        ratio = float(tail[len("logstep"):])
        if ratio <= 1:
            raise ConfigError("logstep ratio must be > 1")
        taus = []
        t = lo
        while t <= hi * (1 + 1e-12):
            taus.append(t)
            t *= ratio
    elif tail.startswith("n"):
        taus = list(np.geomspace(lo, hi, int(tail[1:])))
    else:
        raise ConfigError(f"bad z range tail {tail!r}")
    return [complex(t, eta * t) for t in taus]


def _write_outputs(out_dir: str, report, artifacts: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    if "series" in artifacts:
        with open(os.path.join(out_dir, "decay.csv"), "w") as fh:
            write_decay_csv(fh, artifacts["series"], report.scenario)
    if "sweep" in artifacts:
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            artifacts["sweep"].write_csv(fh)
    if "trajectory" in artifacts:
        with open(os.path.join(out_dir, "trajectory.csv"), "w") as fh:
            artifacts["trajectory"].write_csv(fh)


def _exit_code(report) -> int:
    statuses = [v["status"] for v in report.verdicts]
    if any(s == "fail" for s in statuses):
        return 1
    if any(s == "undecided" for s in statuses):
        return 2
    return 0


def _print_verdicts(report) -> None:
    for v in report.verdicts:
        print(f"[{v['status']:9s}] {v['name']}  ({v['tolerance']})  {v['detail']}")
    print(f"overall: {report.overall}")


def _common_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # shared flags are legal both before and after the subcommand; the
    # after-position copies only override when given explicitly
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int,
                        default=d if suppress else DEFAULT_SEED)
    parser.add_argument("--threads", type=int, default=d if suppress else 1)
    parser.add_argument("--out", default=d if suppress else None,
                        help="output directory (default DSLAB_OUT or ./dslab-out)")
    parser.add_argument("--override", action="append", metavar="K=V",
                        default=d if suppress else [],
                        help="config override, repeatable (e.g. damping.alpha=0.5)")
    parser.add_argument("--tol-scale", type=float, default=d if suppress else 1.0,
                        help="multiplies all pass tolerances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dslab",
        description="Damped-operator laboratory on a periodic box: structural "
                    "checks, resolvent sweeps, decay and smoothing experiments, "
                    "classical-flow probes.",
    )
    _common_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _common_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common],
                           help="run a scenario (path or builtin:<name>)")
    p_run.add_argument("scenario")

    p_sweep = sub.add_parser("sweep", parents=[common],
                             help="resolvent sweep with an inline z range")
    p_sweep.add_argument("--regime", choices=("low", "intermediate", "high"), required=True)
    p_sweep.add_argument("--z", required=True, help="e.g. 4:100:logstep1.3 or 0.01:1:n15")
    p_sweep.add_argument("--scenario", default="builtin:high2d-damped")

    p_flow = sub.add_parser("flow", parents=[common], help="classical trajectory suite")
    p_flow.add_argument("--scenario", default="builtin:flow-trapping")

    sub.add_parser("check", parents=[common],
                   help="structural property suite on defaults")

    sub.add_parser("list-scenarios", parents=[common],
                   help="print the builtin scenario library")

    p_echo = sub.add_parser("echo", parents=[common],
                            help="print the resolved config as TOML")
    p_echo.add_argument("scenario")
    return parser


def main(argv: list[str] | None = None) -> int:
    tune_allocator()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 3 if exc.code not in (0, None) else 0
    set_fft_workers(args.threads)
    out_dir = args.out or os.environ.get("DSLAB_OUT") or "dslab-out"

    try:
        if args.command == "list-scenarios":
            lib = builtin_scenarios()
            for name in sorted(lib):
                print(f"builtin:{name:24s} {lib[name].regime}")
            return 0

        if args.command == "echo":
            scenario = resolve_scenario(args.scenario, args.override)
            sys.stdout.write(emit_toml(scenario_to_config(scenario)))
            return 0

        if args.command == "check":
            scenario = resolve_scenario("builtin:structural", args.override)
            report, artifacts = run_scenario(scenario, seed=args.seed, tol_scale=args.tol_scale)
            _write_outputs(out_dir, report, artifacts)
            _print_verdicts(report)
            return _exit_code(report)

        if args.command == "run":
            scenario = resolve_scenario(args.scenario, args.override)
            for warning in scenario.hypothesis_warnings():
                print(f"warning: out-of-hypothesis: {warning}", file=sys.stderr)
            report, artifacts = run_scenario(scenario, seed=args.seed, tol_scale=args.tol_scale)
            _write_outputs(out_dir, report, artifacts)
            _print_verdicts(report)
            return _exit_code(report)

        if args.command == "flow":
            scenario = resolve_scenario(args.scenario, args.override)
            report, artifacts = run_scenario(scenario, seed=args.seed, tol_scale=args.tol_scale)
            _write_outputs(out_dir, report, artifacts)
            _print_verdicts(report)
            return _exit_code(report)

        if args.command == "sweep":
            scenario = resolve_scenario(args.scenario, args.override)
            op = scenario.build_operator()
            q = ResolventQuery(
                z=1j,
                n=scenario.n_power,
                delta_left=scenario.delta,
                delta_right=scenario.delta,
                solver_tol=scenario.resolvent.tol,
                max_iters=scenario.resolvent.max_iters,
            )
            z_list = _parse_z_spec(args.z, scenario.resolvent.eta)
            table = frequency_sweep(op, args.regime, q, z_list, seed=args.seed)
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
                table.write_csv(fh)
            print(f"fitted log-log slope over {len(table.converged_rows)} converged points: "
                  f"{table.slope}")
            return 0 if all(r.converged for r in table.rows) else 2

    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 3


if __name__ == "__main__":
    sys.exit(main())
