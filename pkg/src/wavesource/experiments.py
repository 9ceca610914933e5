"""Config-driven studies on top of the forward/reconstruction pipeline.

Four studies are provided: mesh-refinement rates at fixed weight
(``run_h_convergence``), a sweep over regularization weights
(``run_alpha_sweep``), the error-versus-weight scaling law across sensor
counts (``run_scaling_study``), and the self-consistent weight iteration
(``run_self_consistent``).

Every study reads an :class:`ExperimentConfig`, evaluates its
independent (level, seed, alpha) cells in sorted order so aggregation is
deterministic, writes one CSV table whose rows each carry the full
identifying metadata (h, tau, n, sigma, alpha, seed, config hash), and
renders an SVG figure from the CSV it just wrote rather than from
in-memory state, so every figure can be regenerated from the artifacts
alone.

Synthetic clean data come from the truncated spectral reference
solution, not from the same discrete operator used for reconstruction;
the discretization error of the forward map therefore shows up in the
studies the way it would with externally supplied measurements.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, fields

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from wavesource import alpha_select, tikhonov
from wavesource.alpha_select import SelectionTrace, rule_alpha
from wavesource.errors import ConfigError, InsufficientDataError, NumericalError
from wavesource.forward import (
    TemporalProfile,
    TimeGrid,
    assemble_forward_gram,
    final_time_map,
    quartic_profile,
)
from wavesource.measure import LAYOUTS, NoiseSpec, SensorSet, make_sensors, synthesize
from wavesource.mesh import FEMatrices, Mesh, assemble, build_interval_mesh, build_square_mesh
from wavesource.metrics import ErrorReport, h_minus1_norm, l2_norm, project_l2
from wavesource.sources import Source, get_source
from wavesource.spectral_oracle import oracle_forward
from wavesource.tikhonov import ReconstructionResult

MAX_SENSORS = 90_000
MAX_DOFS = 1_000

_POLICIES = ("fixed", "sweep", "rule", "self-consistent")


def profile_from_spec(spec: str, t_final: float = 1.0) -> TemporalProfile:
    """Temporal factor from a config string.

    ``t4`` is the built-in quartic profile; ``expr:<numpy expression in
    t>`` evaluates a custom one, which must vanish together with its
    first three derivatives at t = 0 (the standing compatibility
    assumption; violations are rejected at construction).
    """
    spec = spec.strip()
    if spec == "t4":
        return quartic_profile()
    if spec.startswith("expr:"):
        try:
            code = compile(spec[5:], "<profile expression>", "eval")
        except SyntaxError as exc:
            raise ConfigError(f"bad profile expression {spec[5:]!r}: {exc}") from exc
        names = {"np": np, "pi": np.pi, "sin": np.sin, "cos": np.cos, "exp": np.exp}

        def g(t):
            out = eval(code, {"__builtins__": {}}, {**names, "t": t})
            return np.broadcast_to(np.asarray(out, dtype=float), np.shape(t)).copy()

        return TemporalProfile(g=g, compatible=True, name=spec, check_scale=t_final)
    raise ConfigError(f"unknown temporal profile {spec!r} (use 't4' or 'expr:...')")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _parse_float_tuple(text: str) -> tuple:
    return tuple(float(p) for p in text.split(",") if p.strip())


_FIELD_PARSERS = {
    "dim": int,
    "source": str.strip,
    "profile": str.strip,
    "t_final": float,
    "cells": int,
    "n_steps": int,
    "n_sensors": int,
    "layout": str.strip,
    "layout_seed": int,
    "noise_model": str.strip,
    "distribution": str.strip,
    "sigma": float,
    "sigma_from_rule": _parse_bool,
    "seeds": _parse_int_tuple,
    "alpha_policy": str.strip,
    "alpha": float,
    "alpha_sweep": _parse_float_tuple,
    "mesh_levels": _parse_int_tuple,
    "sensor_counts": _parse_int_tuple,
    "oracle_modes": int,
    "output_dir": str.strip,
    "allow_large": _parse_bool,
    "label": str.strip,
}


@dataclass
class ExperimentConfig:
    """Everything a study needs, with desk-scale guard rails.

    ``sigma_from_rule`` replaces ``sigma`` by the noise level at which
    the balancing rule would select exactly ``alpha`` for this source
    and sensor count; convergence studies use it to keep the noise
    contribution tied to the fixed weight.

    Dof counts above 1000 and sensor counts above 90000 are rejected
    unless ``allow_large`` is set; they work, but runtimes leave
    desk scale.
    """

    dim: int = 1
    source: str = "example1d"
    profile: str = "t4"
    t_final: float = 1.0
    cells: int = 251
    n_steps: int = 200
    n_sensors: int = 300
    layout: str = "uniform-grid"
    layout_seed: int = 0
    noise_model: str = "Y1"
    distribution: str = "gaussian"
    sigma: float = 0.009
    sigma_from_rule: bool = False
    seeds: tuple = (0,)
    alpha_policy: str = "fixed"
    alpha: float = 1e-5
    alpha_sweep: tuple = ()
    mesh_levels: tuple = ()
    sensor_counts: tuple = ()
    oracle_modes: int = 0
    output_dir: str = "results"
    allow_large: bool = False
    label: str = ""

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Parse a plain-text config (one ``key = value`` per line, ``#``
        comments); keyword overrides win over file values."""
        values = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                key, _, text = line.partition("=")
                key = key.strip().replace("-", "_")
                if key not in _FIELD_PARSERS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                try:
                    values[key] = _FIELD_PARSERS[key](text.strip())
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        values.update(overrides)
        return cls(**values)

    def config_hash(self) -> str:
        """Twelve hex digits identifying this exact configuration."""
        items = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha1(items.encode()).hexdigest()[:12]

    def n_dofs(self, cells=None) -> int:
        c = self.cells if cells is None else cells
        return c - 1 if self.dim == 1 else (c - 1) ** 2

    def resolved_sigma(self) -> float:
        """The noise level actually used (closed-form when tied to alpha)."""
        if not self.sigma_from_rule:
            return self.sigma
        src = get_source(self.source, self.dim)
        f_norm = src.norm_l2()
        return float(f_norm * np.sqrt(self.n_sensors) * self.alpha ** (0.5 + self.dim / 8.0))

    def validate(self) -> "ExperimentConfig":
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if self.cells < 2:
            raise ConfigError("cells must be at least 2")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if self.t_final <= 0:
            raise ConfigError("t_final must be positive")
        if self.n_sensors < 1:
            raise ConfigError("n_sensors must be at least 1")
        if not self.seeds or any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r} (choose from {sorted(LAYOUTS)})")
        if self.alpha_policy not in _POLICIES:
            raise ConfigError(f"unknown alpha policy {self.alpha_policy!r} (choose from {_POLICIES})")
        if self.alpha_policy == "fixed" and self.alpha <= 0:
            raise ConfigError("fixed alpha policy needs alpha > 0")
        if self.alpha_policy == "rule" and self.sigma <= 0 and not self.sigma_from_rule:
            raise ConfigError("rule alpha policy needs sigma > 0")
        if self.alpha_policy == "sweep":
            if not self.alpha_sweep:
                raise ConfigError("sweep alpha policy needs a nonempty alpha_sweep list")
            sw = np.asarray(self.alpha_sweep, dtype=float)
            if np.any(sw <= 0) or np.any(np.diff(sw) <= 0):
                raise ConfigError("alpha_sweep must be strictly positive and strictly increasing")
        if self.sigma_from_rule:
            if self.alpha_policy != "fixed":
                raise ConfigError("sigma_from_rule ties sigma to a fixed alpha; use alpha_policy=fixed")
            if self.alpha <= 0:
                raise ConfigError("sigma_from_rule needs alpha > 0")
        try:
            NoiseSpec(model=self.noise_model, sigma=max(self.sigma, 0.0),
                      distribution=self.distribution)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        try:
            get_source(self.source, self.dim)
        except (SyntaxError, ValueError) as exc:
            raise ConfigError(f"bad source {self.source!r}: {exc}") from exc
        try:
            profile_from_spec(self.profile, self.t_final)
        except ValueError as exc:
            raise ConfigError(f"bad profile {self.profile!r}: {exc}") from exc
        if any(c < 2 for c in self.mesh_levels):
            raise ConfigError("mesh_levels entries must be at least 2 cells")
        if list(self.mesh_levels) != sorted(set(self.mesh_levels)):
            raise ConfigError("mesh_levels must be strictly increasing")
        if any(n < 1 for n in self.sensor_counts):
            raise ConfigError("sensor_counts entries must be positive")
        if self.dim == 2:
            for n in (self.n_sensors, *self.sensor_counts):
                m = round(np.sqrt(n))
                if n > 1 and m * m != n:
                    raise ConfigError(f"2-d grid layouts need perfect-square sensor counts, got {n}")
        if not self.allow_large:
            for c in (self.cells, *self.mesh_levels):
                if self.n_dofs(c) > MAX_DOFS:
                    raise ConfigError(
                        f"{self.n_dofs(c)} dofs (cells={c}) exceeds the desk-scale cap "
                        f"of {MAX_DOFS}; set allow_large to override")
            for n in (self.n_sensors, *self.sensor_counts):
                if n > MAX_SENSORS:
                    raise ConfigError(
                        f"{n} sensors exceeds the desk-scale cap of {MAX_SENSORS}; "
                        f"set allow_large to override")
        return self


# ---------------------------------------------------------------------------
# fits


@dataclass
class RateFit:
    """Least-squares fit of an error series against an abscissa.

    ``space`` records whether the fit ran on log-log axes (power-law
    rate, ``slope`` is the order) or on linear axes (scaling-law
    regression, ``intercept`` is meaningful). A fit against data with
    (near) zero variance is flagged in ``note`` instead of reporting a
    misleading R^2.
    """

    abscissa: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    space: str = "log-log"
    note: str = ""


def _least_squares(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(slope), float(intercept), ss_res, ss_tot


def fit_rate(abscissa, errors) -> RateFit:
    """Log-log least-squares rate fit over at least three points."""
    x = np.asarray(abscissa, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size < 3:
        raise InsufficientDataError(f"rate fit needs at least 3 points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log rate fit needs strictly positive abscissa and errors")
    slope, intercept, ss_res, ss_tot = _least_squares(np.log(x), np.log(y))
    if not np.isfinite(slope):
        raise NumericalError("rate fit produced a non-finite slope")
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    note = "" if ss_tot > 0 else "degenerate: errors have zero variance"
    return RateFit(x, y, slope, intercept, r2, space="log-log", note=note)


def fit_linear(abscissa, errors) -> RateFit:
    """Linear least-squares fit over at least three points."""
    x = np.asarray(abscissa, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size < 3:
        raise InsufficientDataError(f"linear fit needs at least 3 points, got {x.size}")
    slope, intercept, ss_res, ss_tot = _least_squares(x, y)
    if not np.isfinite(slope):
        raise NumericalError("linear fit produced a non-finite slope")
    floor = 1e-24 * max(1.0, float(np.max(np.abs(y))) ** 2)
    if ss_tot <= floor:
        return RateFit(x, y, slope, intercept, 0.0, space="linear",
                       note="degenerate: response has (near) zero variance")
    return RateFit(x, y, slope, intercept, 1.0 - ss_res / ss_tot, space="linear")


def usable_levels(errors) -> int:
    """Length of the leading run of genuinely decreasing errors.

    Level i stays usable while its error drops by at least a factor
    sqrt(2) from level i-1 (under halved h that is half the ideal
    first-order reduction); the first level that misses the factor marks
    the plateau where the weight floor dominates, and it and everything
    after it are excluded.
    """
    e = np.asarray(errors, dtype=float)
    keep = 1
    for i in range(1, e.size):
        if e[i] <= e[i - 1] / np.sqrt(2.0):
            keep += 1
        else:
            break
    return keep


# ---------------------------------------------------------------------------
# CSV artifacts


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path, meta: dict, header: list, rows: list) -> None:
    """CSV with ``# key=value`` metadata lines before the header row."""
    with open(path, "w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_table(path):
    """Read a table written by :func:`write_table`.

    Returns (meta, columns) where columns maps each header name to an
    array; numeric columns become float arrays, everything else stays
    as strings.
    """
    meta = {}
    header = None
    data = []
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                data.append(cells)
    if header is None:
        raise ValueError(f"{path} contains no table")
    columns = {}
    for j, name in enumerate(header):
        raw_col = [row[j] for row in data]
        try:
            columns[name] = np.array([float(v) for v in raw_col])
        except ValueError:
            columns[name] = np.array(raw_col)
    return meta, columns


def _study_meta(config: ExperimentConfig, study: str, sigma: float, extra: dict = None) -> dict:
    meta = {
        "study": study,
        "config": config.config_hash(),
        "label": config.label,
        "dim": config.dim,
        "source": config.source,
        "profile": config.profile,
        "t_final": config.t_final,
        "noise_model": config.noise_model,
        "distribution": config.distribution,
        "sigma": repr(float(sigma)),
        "layout": config.layout,
        "alpha_policy": config.alpha_policy,
    }
    if extra:
        meta.update(extra)
    return meta


def _paths(config: ExperimentConfig, study: str, suffix: str = "") -> tuple:
    os.makedirs(config.output_dir, exist_ok=True)
    stem = f"{config.label}_{study}" if config.label else study
    if suffix:
        stem = f"{stem}_{suffix}"
    return (os.path.join(config.output_dir, stem + ".csv"),
            os.path.join(config.output_dir, stem + ".svg"))


# ---------------------------------------------------------------------------
# shared pipeline pieces


@dataclass
class _Problem:
    """One assembled (mesh, operator, sensors, truth) cell of a study."""

    matrices: FEMatrices
    grid: TimeGrid
    profile: TemporalProfile
    source: Source
    sensors: SensorSet
    sample: object
    clean: np.ndarray
    truth_dofs: np.ndarray


def _truth_at(source: Source, points: np.ndarray) -> np.ndarray:
    if source.dim == 1:
        return np.asarray(source.fn(points[:, 0]), dtype=float)
    return np.asarray(source.fn(points[:, 0], points[:, 1]), dtype=float)


def _build_problem(config: ExperimentConfig, cells: int, n_steps: int, n_sensors: int,
                   final_map=None, matrices: FEMatrices = None,
                   truth_dofs: np.ndarray = None) -> _Problem:
    if matrices is None:
        mesh = (build_interval_mesh(cells) if config.dim == 1 else build_square_mesh(cells))
        matrices = assemble(mesh)
    source = get_source(config.source, config.dim)
    profile = profile_from_spec(config.profile, config.t_final)
    grid = TimeGrid(config.t_final, n_steps)
    sensors = make_sensors(config.dim, n_sensors, config.layout, seed=config.layout_seed)
    sample = assemble_forward_gram(matrices, grid, profile, sensors, final_map=final_map)
    k_max = config.oracle_modes if config.oracle_modes > 0 else None
    clean = oracle_forward(source, profile, config.t_final, sensors.points, k_max=k_max).values
    if truth_dofs is None:
        truth_dofs = project_l2(matrices, source.fn)
    return _Problem(matrices, grid, profile, source, sensors, sample, clean,
                    truth_dofs)


def _solve_cell(problem: _Problem, config: ExperimentConfig, sigma: float, seed: int,
                alpha: float):
    """Synthesize one noisy data set, reconstruct, and report errors."""
    spec = NoiseSpec(model=config.noise_model, sigma=sigma,
                     distribution=config.distribution, seed=seed)
    ms = synthesize(problem.clean, spec, problem.sensors)
    result = tikhonov.solve(problem.sample, problem.matrices.M, ms, alpha)
    report = _error_report(problem, result.coefficients, sigma, seed, alpha)
    return result, report


def _error_report(problem: _Problem, coefficients: np.ndarray, sigma: float, seed,
                  alpha: float) -> ErrorReport:
    diff = coefficients - problem.truth_dofs
    # data-space error against the clean (noise-free) observations: the
    # forward image of the reconstruction versus the reference solution
    emp = float(np.sqrt(np.mean(
        (problem.sample.sensor_values(coefficients) - problem.clean) ** 2)))
    return ErrorReport(
        empirical_error=emp,
        h_minus1_error=h_minus1_norm(problem.matrices.M, problem.matrices.K, diff),
        l2_error=l2_norm(problem.matrices.M, diff),
        h=problem.matrices.mesh.h,
        tau=problem.grid.tau,
        n=problem.sensors.n,
        sigma=sigma,
        alpha=alpha,
        seed=seed,
    )


_ROW_HEADER = ["h", "tau", "n", "sigma", "alpha", "seed", "config"]


def _row_prefix(report: ErrorReport, config_hash: str) -> list:
    return [report.h, report.tau, report.n, report.sigma, report.alpha,
            report.seed, config_hash]


# ---------------------------------------------------------------------------
# studies


def run_h_convergence(config: ExperimentConfig):
    """Reconstruction error under mesh refinement at fixed weight.

    The time step is tied to the mesh (n_steps = cells, so tau is
    proportional to h), the noise level is usually tied to the weight
    through ``sigma_from_rule``, and the rate fits run over the leading
    levels where the error still genuinely decreases (see
    :func:`usable_levels`).

    The second-order regime is only visible while the discretization
    error sits above the floor set by the weight (roughly h^4 > alpha,
    since the misfit term behaves like sqrt(alpha + h^4)), so the default
    levels start very coarse; refining past the floor only extends the
    plateau.

    Returns the pair (empirical-norm fit, dual-norm fit) and writes
    ``rates.csv`` / ``rates.svg`` under the output directory.
    """
    config.validate()
    if config.alpha_policy != "fixed":
        raise ConfigError("the convergence study needs alpha_policy=fixed")
    levels = config.mesh_levels or ((2, 4, 8, 16, 32, 64) if config.dim == 1 else (2, 4, 8, 16))
    if len(levels) < 3:
        raise InsufficientDataError(f"need at least 3 mesh levels, got {len(levels)}")
    sigma = config.resolved_sigma()
    chash = config.config_hash()

    rows = []
    reports_by_level = []
    for cells in levels:
        problem = _build_problem(config, cells, n_steps=cells, n_sensors=config.n_sensors)
        level_reports = []
        for seed in sorted(config.seeds):
            _, report = _solve_cell(problem, config, sigma, seed, config.alpha)
            level_reports.append(report)
        reports_by_level.append(level_reports)

    hs = np.array([reps[0].h for reps in reports_by_level])
    mean_emp = np.array([np.mean([r.empirical_error for r in reps]) for reps in reports_by_level])
    mean_dual = np.array([np.mean([r.h_minus1_error for r in reps]) for reps in reports_by_level])
    keep_emp = usable_levels(mean_emp)
    keep_dual = usable_levels(mean_dual)
    if keep_emp < 3 or keep_dual < 3:
        raise InsufficientDataError(
            f"only {min(keep_emp, keep_dual)} usable levels before the plateau "
            f"(empirical {keep_emp}, dual {keep_dual}); need 3. Lower alpha or "
            f"start from a coarser mesh.")
    fit_emp = fit_rate(hs[:keep_emp], mean_emp[:keep_emp])
    fit_dual = fit_rate(hs[:keep_dual], mean_dual[:keep_dual])

    for i, reps in enumerate(reports_by_level):
        for r in reps:
            rows.append(_row_prefix(r, chash)
                        + [r.empirical_error, r.h_minus1_error, r.l2_error,
                           int(i < keep_emp), int(i < keep_dual)])
    csv_path, svg_path = _paths(config, "rates")
    meta = _study_meta(config, "rates", sigma, {
        "alpha": repr(float(config.alpha)),
        "slope_empirical": f"{fit_emp.slope:.6f}",
        "slope_hminus1": f"{fit_dual.slope:.6f}",
        "r2_empirical": f"{fit_emp.r_squared:.6f}",
        "r2_hminus1": f"{fit_dual.r_squared:.6f}",
    })
    write_table(csv_path, meta, _ROW_HEADER + ["err_empirical", "err_hminus1", "err_l2",
                                               "used_empirical", "used_hminus1"], rows)
    plot_rates(csv_path, svg_path)
    return fit_emp, fit_dual


@dataclass
class SweepResult:
    """Seed-averaged errors over a weight grid, with the grid argmins."""

    alphas: np.ndarray
    mean_empirical: np.ndarray
    mean_hminus1: np.ndarray
    argmin_empirical: float
    argmin_hminus1: float
    csv_path: str
    plot_path: str


def run_alpha_sweep(config: ExperimentConfig) -> SweepResult:
    """One reconstruction per (seed, weight) on a single mesh.

    The forward operator and its Gram matrix are assembled once and
    shared across the whole grid; only the right-hand side changes with
    the seed. Errors are averaged over seeds before taking argmins.
    """
    config.validate()
    if config.alpha_policy != "sweep":
        raise ConfigError("the sweep study needs alpha_policy=sweep with an alpha_sweep list")
    sigma = config.resolved_sigma() if config.sigma_from_rule else config.sigma
    chash = config.config_hash()
    alphas = np.asarray(config.alpha_sweep, dtype=float)

    problem = _build_problem(config, config.cells, config.n_steps, config.n_sensors)
    rows = []
    errs_emp = np.zeros((alphas.size, len(config.seeds)))
    errs_dual = np.zeros_like(errs_emp)
    for si, seed in enumerate(sorted(config.seeds)):
        for ai, alpha in enumerate(alphas):
            result, report = _solve_cell(problem, config, sigma, seed, float(alpha))
            errs_emp[ai, si] = report.empirical_error
            errs_dual[ai, si] = report.h_minus1_error
            rows.append(_row_prefix(report, chash)
                        + [report.empirical_error, report.h_minus1_error, report.l2_error,
                           result.residual, result.source_norm])
    rows.sort(key=lambda r: (r[4], r[5]))

    mean_emp = errs_emp.mean(axis=1)
    mean_dual = errs_dual.mean(axis=1)
    argmin_emp = float(alphas[int(np.argmin(mean_emp))])
    argmin_dual = float(alphas[int(np.argmin(mean_dual))])

    csv_path, svg_path = _paths(config, "sweep")
    meta = _study_meta(config, "sweep", sigma, {
        "argmin_empirical": repr(argmin_emp),
        "argmin_hminus1": repr(argmin_dual),
    })
    write_table(csv_path, meta, _ROW_HEADER + ["err_empirical", "err_hminus1", "err_l2",
                                               "residual_n", "f_norm"], rows)
    plot_sweep(csv_path, svg_path)
    return SweepResult(alphas, mean_emp, mean_dual, argmin_emp, argmin_dual,
                       csv_path, svg_path)


def run_scaling_study(config: ExperimentConfig):
    """Error against the rule's weight across sensor counts.

    For each sensor count the weight comes from the balancing rule at
    fixed sigma; the theory predicts the empirical error to be linear in
    alpha^(1/2) and the dual-norm error in alpha^(1/4), so those are the
    regressions returned. The final-time solution map is computed once
    and shared across sensor counts. Sensor counts violating the
    sampling constraint alpha >= n^(-4/d) are rejected.
    """
    config.validate()
    if config.alpha_policy != "rule":
        raise ConfigError("the scaling study chooses alpha by the rule; set alpha_policy=rule")
    if config.sigma <= 0:
        raise ConfigError("the scaling study needs sigma > 0")
    counts = config.sensor_counts or ((2500, 10_000, 40_000, 90_000) if config.dim == 2
                                      else (100, 300, 1000, 3000))
    if len(counts) < 3:
        raise InsufficientDataError(f"need at least 3 sensor counts, got {len(counts)}")
    sigma = config.sigma
    chash = config.config_hash()
    source = get_source(config.source, config.dim)
    f_norm = source.norm_l2()

    mesh = (build_interval_mesh(config.cells) if config.dim == 1
            else build_square_mesh(config.cells))
    matrices = assemble(mesh)
    profile = profile_from_spec(config.profile, config.t_final)
    grid = TimeGrid(config.t_final, config.n_steps)
    shared_map = final_time_map(matrices, grid, profile)
    truth_dofs = project_l2(matrices, source.fn)

    rows = []
    alphas, mean_emp, mean_dual = [], [], []
    for n in sorted(counts):
        alpha_n = rule_alpha(sigma, n, config.dim, f_norm)
        bound = float(n) ** (-4.0 / config.dim)
        if alpha_n < bound:
            raise ConfigError(
                f"rule weight {alpha_n:.3e} violates the sampling constraint "
                f"n^(-4/d) = {bound:.3e} at n = {n}; raise sigma or drop this count")
        problem = _build_problem(config, config.cells, config.n_steps, n,
                                 final_map=shared_map, matrices=matrices,
                                 truth_dofs=truth_dofs)
        per_seed_emp, per_seed_dual = [], []
        for seed in sorted(config.seeds):
            _, report = _solve_cell(problem, config, sigma, seed, alpha_n)
            per_seed_emp.append(report.empirical_error)
            per_seed_dual.append(report.h_minus1_error)
            rows.append(_row_prefix(report, chash)
                        + [report.empirical_error, report.h_minus1_error, report.l2_error])
        alphas.append(alpha_n)
        mean_emp.append(float(np.mean(per_seed_emp)))
        mean_dual.append(float(np.mean(per_seed_dual)))

    alphas = np.asarray(alphas)
    fit_emp = fit_linear(np.sqrt(alphas), np.asarray(mean_emp))
    fit_dual = fit_linear(alphas ** 0.25, np.asarray(mean_dual))

    csv_path, svg_path = _paths(config, "scaling")
    meta = _study_meta(config, "scaling", sigma, {
        "slope_empirical": f"{fit_emp.slope:.6g}",
        "intercept_empirical": f"{fit_emp.intercept:.6g}",
        "r2_empirical": f"{fit_emp.r_squared:.6f}",
        "slope_hminus1": f"{fit_dual.slope:.6g}",
        "intercept_hminus1": f"{fit_dual.intercept:.6g}",
        "r2_hminus1": f"{fit_dual.r_squared:.6f}",
        "note": fit_emp.note or fit_dual.note or "",
    })
    write_table(csv_path, meta, _ROW_HEADER + ["err_empirical", "err_hminus1", "err_l2"], rows)
    plot_scaling(csv_path, svg_path)
    return fit_emp, fit_dual


@dataclass
class SelfConsistentRun:
    """One full self-consistent selection run with per-iteration errors."""

    result: ReconstructionResult
    trace: SelectionTrace
    reports: list
    per_seed: dict
    note: str
    csv_path: str
    snapshot_csv: str
    plot_path: str
    snapshot_plot: str


def run_self_consistent(config: ExperimentConfig) -> SelfConsistentRun:
    """Run the self-consistent weight iteration and record its path.

    Every configured seed gets its own iteration (all iterates land in
    one CSV); the returned trace, per-iteration error reports, and the
    reconstruction snapshot belong to the first seed. With sigma = 0 the
    run is flagged degenerate: the selected weight then balances
    discretization error rather than noise.
    """
    config.validate()
    if config.alpha_policy != "self-consistent":
        raise ConfigError("this study needs alpha_policy=self-consistent")
    sigma = config.sigma
    chash = config.config_hash()
    problem = _build_problem(config, config.cells, config.n_steps, config.n_sensors)

    rows = []
    per_seed = {}
    first = None
    for seed in sorted(config.seeds):
        spec = NoiseSpec(model=config.noise_model, sigma=sigma,
                         distribution=config.distribution, seed=seed)
        ms = synthesize(problem.clean, spec, problem.sensors)
        result, trace = alpha_select.self_consistent(
            problem.sample, problem.matrices.M, ms, config.dim)
        reports = []
        for it, alpha in enumerate(trace.alphas):
            res_it = (result if it == trace.iterations - 1
                      else tikhonov.solve(problem.sample, problem.matrices.M, ms, alpha))
            report = _error_report(problem, res_it.coefficients, sigma, seed, alpha)
            reports.append(report)
            rows.append(_row_prefix(report, chash)
                        + [it, trace.residuals[it], trace.f_norms[it],
                           report.empirical_error, report.h_minus1_error])
        per_seed[seed] = (trace.alphas[-1], trace.residuals[-1], trace.iterations,
                          trace.stop_reason)
        if first is None:
            first = (result, trace, reports)

    result, trace, reports = first
    note = ("degenerate: noiseless data; the selected weight balances "
            "discretization error, not noise" if sigma == 0.0 else "")

    csv_path, svg_path = _paths(config, "select")
    meta = _study_meta(config, "select", sigma, {"note": note})
    write_table(csv_path, meta,
                _ROW_HEADER + ["iter", "residual_n", "f_norm", "err_empirical", "err_hminus1"],
                rows)
    snap_csv, snap_svg = _paths(config, "select", "snapshot")
    write_snapshot(snap_csv, problem.matrices.mesh, result.coefficients,
                   problem.source, meta)
    plot_trace(csv_path, svg_path)
    plot_snapshot(snap_csv, snap_svg)
    return SelfConsistentRun(result, trace, reports, per_seed, note,
                             csv_path, snap_csv, svg_path, snap_svg)


def write_snapshot(path, mesh: Mesh, coefficients: np.ndarray, source: Source,
                   meta: dict) -> None:
    """Dump the reconstruction and the true source over all mesh vertices."""
    full = np.zeros(mesh.vertices.shape[0])
    full[mesh.interior] = coefficients
    truth = _truth_at(source, mesh.vertices)
    if mesh.dim == 1:
        header = ["x", "f_rec", "f_true"]
        rows = list(zip(mesh.vertices[:, 0], full, truth))
    else:
        header = ["x0", "x1", "f_rec", "f_true"]
        rows = list(zip(mesh.vertices[:, 0], mesh.vertices[:, 1], full, truth))
    write_table(path, meta, header, rows)


# ---------------------------------------------------------------------------
# plots (all read back the CSV they render)


def _mean_by(columns: dict, key: str, value_keys: list):
    """Group rows by one column and average the value columns."""
    keys = np.unique(columns[key])
    out = {vk: np.empty(keys.size) for vk in value_keys}
    for i, k in enumerate(keys):
        mask = columns[key] == k
        for vk in value_keys:
            out[vk][i] = float(np.mean(columns[vk][mask]))
    return keys, out


def plot_rates(csv_path, svg_path) -> None:
    meta, cols = read_table(csv_path)
    hs, means = _mean_by(cols, "h", ["err_empirical", "err_hminus1"])
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.loglog(hs, means["err_empirical"], "o-", label="empirical norm")
    ax.loglog(hs, means["err_hminus1"], "s-", label="dual norm")
    ref = means["err_empirical"][-1] * (hs / hs[-1]) ** 2
    ax.loglog(hs, ref, "k:", lw=1, label="slope 2")
    ref1 = means["err_hminus1"][-1] * (hs / hs[-1])
    ax.loglog(hs, ref1, "k--", lw=1, label="slope 1")
    ax.set_xlabel("h")
    ax.set_ylabel("reconstruction error")
    ax.set_title(f"rates: slopes {meta.get('slope_empirical', '?')} / "
                 f"{meta.get('slope_hminus1', '?')}")
    ax.grid(True, which="both", ls=":", alpha=0.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)


def plot_sweep(csv_path, svg_path) -> None:
    meta, cols = read_table(csv_path)
    alphas, means = _mean_by(cols, "alpha", ["err_empirical", "err_hminus1"])
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.loglog(alphas, means["err_empirical"], "o-", label="empirical norm")
    ax.loglog(alphas, means["err_hminus1"], "s-", label="dual norm")
    for key, series, marker in (("argmin_empirical", "err_empirical", "o"),
                                ("argmin_hminus1", "err_hminus1", "s")):
        if key in meta:
            a = float(meta[key])
            i = int(np.argmin(np.abs(alphas - a)))
            ax.plot([a], [means[series][i]], marker, ms=14, mfc="none", mec="red")
    ax.set_xlabel("alpha")
    ax.set_ylabel("seed-averaged error")
    ax.set_title("error against the regularization weight")
    ax.grid(True, which="both", ls=":", alpha=0.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)


def plot_scaling(csv_path, svg_path) -> None:
    meta, cols = read_table(csv_path)
    alphas, means = _mean_by(cols, "alpha", ["err_empirical", "err_hminus1"])
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.2))
    for ax, x, y, xlabel, skey, ikey in (
        (axes[0], np.sqrt(alphas), means["err_empirical"], r"$\alpha^{1/2}$",
         "slope_empirical", "intercept_empirical"),
        (axes[1], alphas ** 0.25, means["err_hminus1"], r"$\alpha^{1/4}$",
         "slope_hminus1", "intercept_hminus1"),
    ):
        ax.plot(x, y, "o", label="measured")
        if skey in meta and ikey in meta:
            s, b = float(meta[skey]), float(meta[ikey])
            grid = np.linspace(x.min(), x.max(), 50)
            ax.plot(grid, s * grid + b, "-", lw=1, label="fit")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("seed-averaged error")
        ax.grid(True, ls=":", alpha=0.5)
        ax.legend()
    fig.suptitle("scaling of the error with the rule's weight")
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)


def plot_trace(csv_path, svg_path) -> None:
    meta, cols = read_table(csv_path)
    seeds = np.unique(cols["seed"])
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.2))
    for seed in seeds:
        mask = cols["seed"] == seed
        order = np.argsort(cols["iter"][mask])
        its = cols["iter"][mask][order]
        axes[0].semilogy(its, cols["alpha"][mask][order], "o-",
                         label=f"seed {int(seed)}")
        axes[1].semilogy(its, cols["err_empirical"][mask][order], "o-",
                         label=f"seed {int(seed)}")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("alpha")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("empirical error")
    for ax in axes:
        ax.grid(True, which="both", ls=":", alpha=0.5)
        if seeds.size <= 6:
            ax.legend()
    fig.suptitle("self-consistent weight iteration")
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)


def plot_snapshot(csv_path, svg_path) -> None:
    meta, cols = read_table(csv_path)
    if "x" in cols:
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        order = np.argsort(cols["x"])
        ax.plot(cols["x"][order], cols["f_true"][order], "-", label="true source")
        ax.plot(cols["x"][order], cols["f_rec"][order], "--", label="reconstruction")
        ax.set_xlabel("x")
        ax.set_ylabel("f")
        ax.grid(True, ls=":", alpha=0.5)
        ax.legend()
    else:
        x0 = np.unique(cols["x0"])
        x1 = np.unique(cols["x1"])
        shape = (x0.size, x1.size)
        # vertices are written in lexicographic (x0, x1) order
        order = np.lexsort((cols["x1"], cols["x0"]))
        rec = cols["f_rec"][order].reshape(shape)
        true = cols["f_true"][order].reshape(shape)
        fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.2))
        vmax = max(float(np.abs(true).max()), float(np.abs(rec).max()), 1e-30)
        for ax, z, title in ((axes[0], true, "true source"),
                             (axes[1], rec, "reconstruction")):
            im = ax.pcolormesh(x0, x1, z.T, shading="nearest", vmin=-vmax, vmax=vmax,
                               cmap="RdBu_r")
            ax.set_title(title)
            ax.set_xlabel("x0")
            ax.set_ylabel("x1")
            fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)
