"""Configuration-driven command line for single runs and the benchmark studies.

Subcommands (all take a JSON config validated against the shipped schema,
plus repeatable ``--set key=value`` dotted-path overrides):

- ``run``               one simulation -> ``timeseries.csv`` (+ optional VTK)
- ``convergence-study`` manufactured-solution error table -> ``convergence.csv``
- ``damping-study``     hybrid vs PP vs AC on one discretization -> 3 CSVs
- ``eigen-check``       overdamping criterion (sigma_min, alpha/beta, verdict)
- ``stability-study``   reciprocal-dt vs dt-proportional couplings -> 2 CSVs

Exit codes: 0 success, 2 configuration/input error, 3 solver failure (the
failing step index is reported on stderr).
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import math
import os
import sys

from . import problems as problem_factories
from .diagnostics import (
    convergence_rates,
    pressure_error_l2,
    spacetime_l2,
    velocity_error_l2,
    write_csv,
    write_vtk_snapshot,
)
from .linalg import SolverFailure, check_overdamping, smallest_laplacian_eigenvalue
from .schemes import (
    SchemeConfig,
    SimulationError,
    build_operators,
    run_simulation,
)

__all__ = [
    "ConfigError",
    "load_config",
    "main",
    "cmd_run",
    "cmd_convergence_study",
    "cmd_damping_study",
    "cmd_eigen_check",
    "cmd_stability_study",
]

CONVERGENCE_DTS = (0.5, 0.25, 0.125, 0.0625, 0.03125)
CONVERGENCE_HEADER = "dt,err_u,rate_u,err_p,rate_p,div_norm"
_FMT = "%.16e"


class ConfigError(ValueError):
    """Invalid configuration (bad JSON, schema violation, or inconsistent
    parameter coupling)."""


# -- configuration -------------------------------------------------------------


def config_schema() -> dict:
    text = (
        importlib.resources.files("nsrelax").joinpath("config_schema.json").read_text()
    )
    return json.loads(text)


def _parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _apply_override(config: dict, key: str, value) -> None:
    parts = key.split(".")
    node = config
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {key!r} descends into non-object {part!r}")
        node = child
    node[parts[-1]] = value


def load_config(path: str, overrides=()) -> dict:
    """Read, override, and schema-validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    for item in overrides:
        key, value = _parse_override(item)
        _apply_override(config, key, value)

    import jsonschema

    try:
        jsonschema.validate(config, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return config


def build_problem(config: dict):
    """Instantiate the problem named by the config, forwarding its options."""
    spec = dict(config["problem"])
    name = spec.pop("name")
    factory = {
        "taylor_green": problem_factories.taylor_green_problem,
        "taylor_green_decay": problem_factories.taylor_green_decay_problem,
        "manufactured": problem_factories.manufactured_problem,
        "offset_circles": problem_factories.offset_circles_problem,
        "channel_step": problem_factories.channel_step_problem,
    }[name]
    try:
        return factory(**spec)
    except TypeError as exc:
        raise ConfigError(f"problem {name!r} does not accept {sorted(spec)}: {exc}") from exc


def resolve_coupling(config: dict) -> tuple[float, float]:
    """alpha2 and beta implied by the parameter coupling (or given explicitly)."""
    scheme = config["scheme"]
    coupling = config.get("parameter_coupling", "explicit")
    dt = float(scheme["dt"])
    if coupling == "explicit":
        if "alpha2" not in scheme or "beta" not in scheme:
            raise ConfigError(
                "parameter_coupling 'explicit' requires scheme.alpha2 and scheme.beta"
            )
        return float(scheme["alpha2"]), float(scheme["beta"])
    if "alpha2" in scheme or "beta" in scheme:
        raise ConfigError(
            f"scheme.alpha2/scheme.beta must be omitted with parameter_coupling {coupling!r}"
        )
    if coupling == "reciprocal_dt":
        return 1.0 / dt, 1.0 / dt
    return 1.0 / dt**2, 1.0 / dt**2  # reciprocal_dt2


def build_scheme(config: dict, problem, method: str | None = None,
                 dt: float | None = None, alpha2: float | None = None,
                 beta: float | None = None) -> SchemeConfig:
    scheme = config["scheme"]
    if alpha2 is None or beta is None:
        alpha2, beta = resolve_coupling(config)
    extras = {
        key: scheme[key]
        for key in ("mu", "velocity_tol", "pressure_tol")
        if key in scheme
    }
    return SchemeConfig(
        method=method if method is not None else scheme["method"],
        dt=float(dt if dt is not None else scheme["dt"]),
        alpha2=float(alpha2),
        beta=float(beta),
        nu=problem.nu,
        **extras,
    )


def _output_dir(config: dict) -> str:
    out = config.get("output_dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _check_final_time(T: float, dt: float) -> None:
    steps = round(T / dt)
    if steps < 1 or abs(steps * dt - T) > 1e-12 * max(1.0, abs(T)):
        raise ConfigError(f"final time {T} is not a positive multiple of dt {dt}")


# -- subcommands ----------------------------------------------------------------


def cmd_run(config: dict) -> int:
    problem = build_problem(config)
    scheme = build_scheme(config, problem)
    _check_final_time(float(config["T"]), scheme.dt)
    out = _output_dir(config)
    every = int(config.get("snapshots_every", 0))

    callbacks = []
    if every > 0:
        def snapshot(n, state, record):
            if n % every == 0:
                path = os.path.join(out, f"snapshot_{n:06d}.vtk")
                write_vtk_snapshot(problem.mesh, state, path)
        callbacks.append(snapshot)

    result = run_simulation(problem, scheme, float(config["T"]), callbacks=callbacks)
    csv_path = os.path.join(out, "timeseries.csv")
    write_csv(result.records, csv_path)
    print(f"wrote {csv_path} ({len(result.records)} rows)")
    return 0


def cmd_convergence_study(config: dict) -> int:
    out = _output_dir(config)
    T = float(config["T"])
    for fixed_dt in CONVERGENCE_DTS:
        _check_final_time(T, fixed_dt)
    coupling = config.get("parameter_coupling", "explicit")

    errs_u, errs_p, divs = [], [], []
    for dt in CONVERGENCE_DTS:
        problem = build_problem(config)
        if problem.exact is None:
            raise ConfigError(
                f"convergence study requires a problem with an exact solution, "
                f"got {config['problem']['name']!r}"
            )
        if coupling == "explicit":
            alpha2, beta = resolve_coupling(config)
        elif coupling == "reciprocal_dt":
            alpha2 = beta = 1.0 / dt
        else:
            alpha2 = beta = 1.0 / dt**2
        scheme = build_scheme(config, problem, dt=dt, alpha2=alpha2, beta=beta)
        operators = build_operators(problem)
        exact_u, exact_p = problem.exact
        dofmap = operators.dofmap

        eu, ep = [], []
        def record_errors(n, state, record):
            eu.append(velocity_error_l2(dofmap, state.w, exact_u, state.t))
            ep.append(pressure_error_l2(dofmap, state.lam, exact_p, state.t))
        result = run_simulation(problem, scheme, T, callbacks=[record_errors],
                                operators=operators)
        errs_u.append(spacetime_l2(eu, dt))
        errs_p.append(spacetime_l2(ep, dt))
        divs.append(spacetime_l2([r.norm_div_w for r in result.records], dt))
        print(
            f"dt={dt:g}: err_u={errs_u[-1]:.6e} err_p={errs_p[-1]:.6e} "
            f"div={divs[-1]:.6e}"
        )

    rates_u = convergence_rates(errs_u, CONVERGENCE_DTS)
    rates_p = convergence_rates(errs_p, CONVERGENCE_DTS)
    lines = [CONVERGENCE_HEADER]
    for i, dt in enumerate(CONVERGENCE_DTS):
        ru = "" if i == 0 else _FMT % rates_u[i - 1]
        rp = "" if i == 0 else _FMT % rates_p[i - 1]
        lines.append(
            ",".join(
                [_FMT % dt, _FMT % errs_u[i], ru, _FMT % errs_p[i], rp, _FMT % divs[i]]
            )
        )
    path = os.path.join(out, "convergence.csv")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path} ({len(CONVERGENCE_DTS)} rows)")
    return 0


_DAMPING_METHODS = {
    "be": ("hybrid_be_decoupled", "pp_be", "ac_be"),
    "be_filtered": ("hybrid_be_filtered", "pp_be_filtered", "ac_be_filtered"),
    "trapezoidal": ("hybrid_trapezoidal", "pp_trapezoidal", "ac_trapezoidal"),
}


def cmd_damping_study(config: dict) -> int:
    discretization = config.get("discretization", "be")
    methods = _DAMPING_METHODS[discretization]
    out = _output_dir(config)
    T = float(config["T"])
    _check_final_time(T, float(config["scheme"]["dt"]))

    problem = build_problem(config)
    operators = build_operators(problem)
    for family, method in zip(("hybrid", "pp", "ac"), methods):
        scheme = build_scheme(config, problem, method=method)
        result = run_simulation(problem, scheme, T, operators=operators)
        path = os.path.join(out, f"damping_{family}.csv")
        write_csv(result.records, path)
        print(f"wrote {path} ({method}, {len(result.records)} rows)")
    return 0


def cmd_eigen_check(config: dict, as_json: bool = False) -> int:
    problem = build_problem(config)
    operators = build_operators(problem)
    bc = config.get("eigen_bc", "neumann_zero_mean")
    sigma_min = smallest_laplacian_eigenvalue(problem.mesh, operators.dofmap, bc)
    alpha2, beta = resolve_coupling(config)
    alpha = math.sqrt(alpha2)
    result = check_overdamping(alpha, beta, sigma_min)
    verdict = "overdamped" if result.overdamped else "not_overdamped"
    if as_json:
        print(
            json.dumps(
                {
                    "sigma_min": sigma_min,
                    "alpha": alpha,
                    "beta": beta,
                    "alpha_over_beta": alpha / beta,
                    "sqrt_sigma_min": math.sqrt(sigma_min),
                    "verdict": verdict,
                    "margin": result.margin,
                },
                sort_keys=True,
            )
        )
    else:
        print(f"sigma_min = {sigma_min:.10e}")
        print(f"alpha/beta = {alpha / beta:.10e}")
        print(f"sqrt(sigma_min) = {math.sqrt(sigma_min):.10e}")
        print(f"verdict = {verdict}")
        print(f"margin = {result.margin:.10e}")
    return 0


_STABILITY_COUPLINGS = (
    ("reciprocal_dt", lambda dt: 1.0 / dt),
    ("dt_proportional", lambda dt: dt),
)


def cmd_stability_study(config: dict) -> int:
    scheme_spec = config["scheme"]
    if "alpha2" in scheme_spec or "beta" in scheme_spec:
        raise ConfigError(
            "stability study sets alpha2/beta itself; omit them from scheme"
        )
    out = _output_dir(config)
    T = float(config["T"])
    dt = float(scheme_spec["dt"])
    _check_final_time(T, dt)
    problem = build_problem(config)
    operators = build_operators(problem)
    for label, value in _STABILITY_COUPLINGS:
        v = value(dt)
        scheme = build_scheme(config, problem, alpha2=v, beta=v)
        result = run_simulation(problem, scheme, T, operators=operators)
        path = os.path.join(out, f"stability_{label}.csv")
        write_csv(result.records, path)
        print(
            f"wrote {path} (alpha2=beta={v:g}, final div "
            f"{result.records[-1].norm_div_w:.3e})"
        )
    return 0


# -- entry point ----------------------------------------------------------------


_SUBCOMMANDS = {
    "run": cmd_run,
    "convergence-study": cmd_convergence_study,
    "damping-study": cmd_damping_study,
    "eigen-check": cmd_eigen_check,
    "stability-study": cmd_stability_study,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsrelax",
        description="Incompressible Navier-Stokes solver with relaxed "
        "incompressibility (hybrid penalty/artificial-compression).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')}")
        p.add_argument("config", help="path to the JSON configuration file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override, e.g. --set scheme.dt=0.05",
        )
        if name == "eigen-check":
            p.add_argument(
                "--json", action="store_true", help="machine-readable output"
            )
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.overrides)
        if args.command == "eigen-check":
            return cmd_eigen_check(config, as_json=args.json)
        return _SUBCOMMANDS[args.command](config)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"solver failure at step {exc.step_index}: {exc}", file=sys.stderr)
        return 3
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
