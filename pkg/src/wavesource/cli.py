"""Command line front end for the reconstruction studies.

Every subcommand reads an optional plain-text config file and applies
flag overrides on top, so a study is reproducible from its config alone.
Exit codes: 0 success, 2 configuration problem, 3 numerical failure,
4 not enough usable data to fit or report.
"""

import argparse
import sys

from wavesource import alpha_select, tikhonov
from wavesource.errors import ConfigError, InsufficientDataError, NumericalError
from wavesource.experiments import (
    _FIELD_PARSERS,
    ExperimentConfig,
    _build_problem,
    _error_report,
    _paths,
    _study_meta,
    plot_snapshot,
    profile_from_spec,
    run_alpha_sweep,
    run_h_convergence,
    run_scaling_study,
    run_self_consistent,
    write_snapshot,
)
from wavesource.forward import TimeGrid, apply_forward, assemble_forward_gram
from wavesource.measure import (
    NoiseSpec,
    make_sensors,
    read_measurements,
    synthesize,
    write_measurements,
)
from wavesource.mesh import assemble, build_interval_mesh, build_square_mesh
from wavesource.metrics import project_l2
from wavesource.sources import get_source

_FLAG_HELP = {
    "dim": "spatial dimension, 1 or 2",
    "source": "source term: a named builtin, mode:k[,l], or expr:<formula in x (and y)>",
    "profile": "time profile: t4 or expr:<formula in t>",
    "t_final": "final observation time",
    "cells": "mesh cells per side",
    "n_steps": "time steps to the final time",
    "n_sensors": "number of measurement points",
    "layout": "sensor layout (uniform-grid or jittered-grid)",
    "layout_seed": "seed for jittered sensor layouts",
    "noise_model": "noise assumption tag, Y1 or Y2",
    "distribution": "noise distribution (gaussian, uniform, rademacher)",
    "sigma": "noise standard deviation",
    "sigma_from_rule": "derive sigma from alpha via the balancing rule",
    "seeds": "comma-separated noise seeds",
    "alpha": "regularization weight for fixed-weight runs",
    "alpha_sweep": "comma-separated increasing weight grid",
    "mesh_levels": "comma-separated cell counts for the convergence study",
    "sensor_counts": "comma-separated sensor counts for the scaling study",
    "oracle_modes": "modes in the reference series for clean data (0 = default)",
    "output_dir": "directory for CSV and SVG artifacts",
    "allow_large": "lift the desk-scale caps on dofs and sensors",
    "label": "prefix for artifact file names",
}

# alpha_policy is deliberately absent: each subcommand fixes the policy
# that makes sense for it.
_OVERRIDE_FIELDS = [k for k in _FIELD_PARSERS if k != "alpha_policy"]


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="plain-text config file, one key = value per line")
    for name in _OVERRIDE_FIELDS:
        flag = "--" + name.replace("_", "-")
        if _FIELD_PARSERS[name].__name__ == "_parse_bool":
            parser.add_argument(flag, dest=name, action="store_const", const="true",
                                default=None, help=_FLAG_HELP[name])
        else:
            parser.add_argument(flag, dest=name, metavar="V", default=None,
                                help=_FLAG_HELP[name])


def _load_config(args, policy: str) -> ExperimentConfig:
    """Config file plus flag overrides, with the subcommand's weight policy."""
    overrides = {}
    for name in _OVERRIDE_FIELDS:
        raw = getattr(args, name, None)
        if raw is None:
            continue
        try:
            overrides[name] = _FIELD_PARSERS[name](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for --{name.replace('_', '-')}: {exc}") from exc
    overrides["alpha_policy"] = policy
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig(**overrides)


def _build_mesh_pieces(config: ExperimentConfig):
    mesh = (build_interval_mesh(config.cells) if config.dim == 1
            else build_square_mesh(config.cells))
    matrices = assemble(mesh)
    source = get_source(config.source, config.dim)
    profile = profile_from_spec(config.profile, config.t_final)
    grid = TimeGrid(config.t_final, config.n_steps)
    return mesh, matrices, source, profile, grid


def cmd_forward(args) -> int:
    """Simulate measurements and write them as CSV."""
    config = _load_config(args, "fixed").validate()
    mesh, matrices, source, profile, grid = _build_mesh_pieces(config)
    sensors = make_sensors(config.dim, config.n_sensors, config.layout,
                           config.layout_seed)
    if args.oracle:
        from wavesource.spectral_oracle import oracle_forward
        k_max = config.oracle_modes if config.oracle_modes > 0 else None
        clean = oracle_forward(source.fn, profile, config.t_final, sensors.points,
                               k_max=k_max, dim=config.dim).values
    else:
        clean = apply_forward(matrices, grid, profile,
                              project_l2(matrices, source.fn), sensors)
    spec = NoiseSpec(model=config.noise_model, sigma=config.sigma,
                     distribution=config.distribution, seed=config.seeds[0])
    ms = synthesize(clean, spec, sensors)
    out = args.out or _paths(config, "measurements")[0]
    write_measurements(out, ms)
    print(f"wrote {ms.n} measurements (sigma={config.sigma:g}, "
          f"seed={config.seeds[0]}) to {out}")
    return 0


def cmd_reconstruct(args) -> int:
    """One reconstruction, from a measurement file or synthetic data."""
    config = _load_config(args, args.alpha_policy or "fixed").validate()
    if config.alpha_policy not in ("fixed", "self-consistent"):
        raise ConfigError("reconstruct supports alpha_policy fixed or self-consistent; "
                          "use the sweep/scaling subcommands for grid and rule studies")
    synthetic = args.data is None
    if synthetic:
        problem = _build_problem(config, config.cells, config.n_steps, config.n_sensors)
        mesh, matrices = problem.matrices.mesh, problem.matrices
        sample, source = problem.sample, problem.source
        spec = NoiseSpec(model=config.noise_model, sigma=config.sigma,
                         distribution=config.distribution, seed=config.seeds[0])
        ms = synthesize(problem.clean, spec, problem.sensors)
    else:
        ms = read_measurements(args.data)
        if ms.sensors is None:
            raise ConfigError(f"{args.data} has no sensor coordinates")
        if ms.sensors.dim != config.dim:
            raise ConfigError(f"{args.data} holds {ms.sensors.dim}-d sensors but the "
                              f"config says dim={config.dim}")
        mesh, matrices, source, profile, grid = _build_mesh_pieces(config)
        sample = assemble_forward_gram(matrices, grid, profile, ms.sensors)

    if config.alpha_policy == "fixed":
        result = tikhonov.solve(sample, matrices.M, ms, config.alpha)
    else:
        result, trace = alpha_select.self_consistent(sample, matrices.M, ms, config.dim)
        print(f"selected alpha={result.alpha:.4e} after {trace.iterations} iterations "
              f"({trace.stop_reason})")

    meta = _study_meta(config, "reconstruction", config.sigma,
                       {"alpha": result.alpha, "residual_n": result.residual})
    out = args.out or _paths(config, "reconstruction")[0]
    write_snapshot(out, mesh, result.coefficients, source, meta)
    plot_snapshot(out, out.rsplit(".", 1)[0] + ".svg")
    print(f"alpha={result.alpha:.4e}  residual={result.residual:.4e}  "
          f"|f_h|={result.source_norm:.4e}")
    if synthetic:
        report = _error_report(problem, result.coefficients, config.sigma,
                               config.seeds[0], result.alpha)
        print(f"errors vs truth: empirical={report.empirical_error:.4e}  "
              f"dual={report.h_minus1_error:.4e}  l2={report.l2_error:.4e}")
    print(f"wrote {out}")
    return 0


def cmd_rates(args) -> int:
    """Mesh refinement study at fixed weight."""
    config = _load_config(args, "fixed")
    fit_emp, fit_dual = run_h_convergence(config)
    print(f"empirical-norm rate: {fit_emp.slope:.3f} (r2={fit_emp.r_squared:.4f}, "
          f"{len(fit_emp.abscissa)} levels)")
    print(f"dual-norm rate:      {fit_dual.slope:.3f} (r2={fit_dual.r_squared:.4f}, "
          f"{len(fit_dual.abscissa)} levels)")
    csv_path, svg_path = _paths(config, "rates")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_sweep(args) -> int:
    """Error against a grid of regularization weights."""
    config = _load_config(args, "sweep")
    res = run_alpha_sweep(config)
    print(f"empirical error minimized at alpha={res.argmin_empirical:.1e}")
    print(f"dual error minimized at alpha={res.argmin_hminus1:.1e}")
    print(f"wrote {res.csv_path} and {res.plot_path}")
    return 0


def cmd_select(args) -> int:
    """Self-consistent weight selection with per-iteration errors."""
    config = _load_config(args, "self-consistent")
    run = run_self_consistent(config)
    if run.note:
        print(f"note: {run.note}")
    for seed in sorted(run.per_seed):
        alpha, residual, iters, reason = run.per_seed[seed]
        print(f"seed {seed}: alpha={alpha:.4e}  residual={residual:.4e}  "
              f"iterations={iters} ({reason})")
    print(f"wrote {run.csv_path}, {run.snapshot_csv} and plots")
    return 0


def cmd_scaling(args) -> int:
    """Error scaling against the rule-selected weight across sensor counts."""
    config = _load_config(args, "rule")
    fit_emp, fit_dual = run_scaling_study(config)
    print(f"empirical error vs sqrt(alpha): slope={fit_emp.slope:.4e} "
          f"intercept={fit_emp.intercept:.4e} r2={fit_emp.r_squared:.4f}")
    print(f"dual error vs alpha^(1/4):      slope={fit_dual.slope:.4e} "
          f"intercept={fit_dual.intercept:.4e} r2={fit_dual.r_squared:.4f}")
    if fit_emp.note or fit_dual.note:
        print(f"note: {fit_emp.note or fit_dual.note}")
    csv_path, svg_path = _paths(config, "scaling")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavesource",
        description="Recover a wave-equation source from noisy final-time "
                    "point measurements.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="simulate measurements and write a CSV")
    _add_common_flags(p)
    p.add_argument("--oracle", action="store_true",
                   help="use the reference series solver instead of the "
                        "finite element solver for the clean data")
    p.add_argument("--out", metavar="FILE", help="measurement CSV path")
    p.set_defaults(handler=cmd_forward)

    p = sub.add_parser("reconstruct", help="reconstruct the source once")
    _add_common_flags(p)
    p.add_argument("--data", metavar="FILE",
                   help="measurement CSV from the forward subcommand "
                        "(default: synthesize per the config)")
    p.add_argument("--alpha-policy", choices=("fixed", "self-consistent"),
                   default=None, help="how to pick the weight (default fixed)")
    p.add_argument("--out", metavar="FILE", help="snapshot CSV path")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("rates", help="mesh refinement study at fixed weight")
    _add_common_flags(p)
    p.set_defaults(handler=cmd_rates)

    p = sub.add_parser("sweep", help="error over a weight grid")
    _add_common_flags(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("select", help="self-consistent weight selection")
    _add_common_flags(p)
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("scaling", help="error scaling across sensor counts")
    _add_common_flags(p)
    p.set_defaults(handler=cmd_scaling)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
