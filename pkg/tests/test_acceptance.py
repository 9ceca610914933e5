"""End-to-end acceptance checks, one printed verdict line per criterion.

Run ``pytest tests/test_acceptance.py -v -s`` to watch the verdict lines
appear as the suite progresses; without ``-s`` pytest only shows them
for failing tests. Each check drives the shipped pipeline from the
outside and pins a headline claim: forward accuracy and order, the
reconstruction error rates under mesh refinement with rule-matched
noise, the balancing rule values, the location of the sweep minimum,
the self-consistent weight iteration, the sensor-count scaling law in
two dimensions, the growth of the spectral inversion weights, the
optimality invariants of the solver, and the statistical contracts of
the noise models.

The heavier studies write their tables and figures into pytest's tmp
directory; nothing here reads previously generated results.
"""

import time

import numpy as np

from wavesource import tikhonov
from wavesource.alpha_select import rule_alpha
from wavesource.experiments import (
    ExperimentConfig,
    fit_rate,
    run_alpha_sweep,
    run_h_convergence,
    run_scaling_study,
    run_self_consistent,
)
from wavesource.forward import (
    TimeGrid,
    assemble_forward_gram,
    quartic_profile,
    step_scheme,
)
from wavesource.measure import NoiseSpec, draw_noise, make_sensors, synthesize
from wavesource.mesh import assemble, build_interval_mesh
from wavesource.sources import example_source_1d
from wavesource.spectral_oracle import eigenvalue_scaling, oracle_forward


def _verdict(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num} {name}: {detail} -> {'PASS' if ok else 'FAIL'}")


def test_1_forward_solver_accuracy_and_order():
    # Single separated mode, so the exact final-time solution is the
    # Duhamel factor times the mode itself.
    t0 = time.time()
    profile = quartic_profile()
    amp = float(profile.duhamel(np.pi**2, 1.0))
    hs, errors = [], []
    for cells in (32, 64, 128, 256):
        mesh = build_interval_mesh(cells)
        matrices = assemble(mesh)
        grid = TimeGrid(1.0, cells)
        state = step_scheme(matrices, grid, profile, lambda x: np.sin(np.pi * x))
        x = mesh.vertices[mesh.interior, 0]
        exact = amp * np.sin(np.pi * x)
        errors.append(float(np.max(np.abs(state.u - exact)) / np.max(np.abs(exact))))
        hs.append(mesh.h)
    fit = fit_rate(hs, errors)
    elapsed = time.time() - t0
    ok = errors[-1] <= 1e-3 and abs(fit.slope - 2.0) <= 0.3 and elapsed <= 10.0
    _verdict(1, "forward accuracy", ok,
             f"rel max err {errors[-1]:.2e} at h=tau=1/256 (tol 1e-3), "
             f"order {fit.slope:.3f} (band 2.0 +/- 0.3), {elapsed:.1f}s")
    assert errors[-1] <= 1e-3
    assert abs(fit.slope - 2.0) <= 0.3
    assert elapsed <= 10.0


def test_2_error_rates_under_matched_noise(tmp_path):
    # Noise tied to the fixed weight through the balancing rule, rates
    # fitted over the levels ahead of the plateau. The empirical-norm
    # series only keeps three usable levels before its noise floor, and
    # at the third level roughly half the error is already noise, which
    # drags the fitted order down to about 1.68 against the nominal 2;
    # the dual-norm series sits comfortably at first order.
    config = ExperimentConfig(
        alpha=1e-6,
        sigma_from_rule=True,
        n_sensors=300,
        seeds=tuple(range(20)),
        output_dir=str(tmp_path),
        label="acc_rates",
    )
    t0 = time.time()
    fit_emp, fit_dual = run_h_convergence(config)
    elapsed = time.time() - t0
    emp_ok = abs(fit_emp.slope - 2.0) <= 0.3
    dual_ok = abs(fit_dual.slope - 1.0) <= 0.3
    ok = emp_ok and dual_ok and elapsed <= 120.0
    _verdict(2, "refinement rates", ok,
             f"empirical order {fit_emp.slope:.3f} (band 2.0 +/- 0.3, "
             f"{'in' if emp_ok else 'out'}), dual order {fit_dual.slope:.3f} "
             f"(band 1.0 +/- 0.3, {'in' if dual_ok else 'out'}), "
             f"alpha=1e-6, sigma from rule, n=300, 20 seeds, {elapsed:.1f}s")
    assert emp_ok, f"empirical order {fit_emp.slope:.3f} outside 2.0 +/- 0.3"
    assert dual_ok, f"dual order {fit_dual.slope:.3f} outside 1.0 +/- 0.3"
    assert elapsed <= 120.0


def test_3_balancing_rule_values():
    f_norm = example_source_1d().norm_l2()
    a300 = rule_alpha(0.009, 300, 1, f_norm)
    a1000 = rule_alpha(0.009, 1000, 1, f_norm)
    dev300 = abs(a300 / 1.1749e-5 - 1.0)
    dev1000 = abs(a1000 / 4.4845e-6 - 1.0)
    ok = dev300 <= 0.02 and dev1000 <= 0.02
    _verdict(3, "balancing rule", ok,
             f"alpha(n=300)={a300:.4e} vs 1.1749e-5 ({100 * dev300:.2f}%), "
             f"alpha(n=1000)={a1000:.4e} vs 4.4845e-6 ({100 * dev1000:.2f}%), tol 2%")
    assert dev300 <= 0.02
    assert dev1000 <= 0.02


def test_4_weight_sweep_minimum(tmp_path):
    grid = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
    config = ExperimentConfig(
        alpha_policy="sweep",
        alpha_sweep=grid,
        cells=251,
        n_steps=200,
        sigma=0.009,
        n_sensors=300,
        seeds=tuple(range(10)),
        output_dir=str(tmp_path),
        label="acc_sweep",
    )
    t0 = time.time()
    result = run_alpha_sweep(config)
    elapsed = time.time() - t0
    target = grid.index(1e-5)
    i_emp = int(np.argmin(np.abs(np.asarray(result.alphas) - result.argmin_empirical)))
    i_dual = int(np.argmin(np.abs(np.asarray(result.alphas) - result.argmin_hminus1)))
    emp_ok = abs(i_emp - target) <= 1
    dual_ok = abs(i_dual - target) <= 1
    ok = emp_ok and dual_ok and elapsed <= 300.0
    _verdict(4, "sweep minimum", ok,
             f"argmin empirical {result.argmin_empirical:.1e}, "
             f"argmin dual {result.argmin_hminus1:.1e} "
             f"(want 1e-5 or an adjacent grid point), 10 seeds, {elapsed:.1f}s")
    assert emp_ok, f"empirical argmin {result.argmin_empirical:.1e} not adjacent to 1e-5"
    assert dual_ok, f"dual argmin {result.argmin_hminus1:.1e} not adjacent to 1e-5"
    assert elapsed <= 300.0


def test_5_self_consistent_selection(tmp_path):
    config = ExperimentConfig(
        alpha_policy="self-consistent",
        cells=251,
        n_steps=200,
        sigma=0.009,
        n_sensors=1000,
        seeds=(0, 1, 2, 3, 4),
        output_dir=str(tmp_path),
        label="acc_select",
    )
    t0 = time.time()
    run = run_self_consistent(config)
    elapsed = time.time() - t0
    alphas = np.array([v[0] for v in run.per_seed.values()])
    residuals = np.array([v[1] for v in run.per_seed.values()])
    iterations = [v[2] for v in run.per_seed.values()]
    reasons = [v[3] for v in run.per_seed.values()]
    mean_alpha = float(alphas.mean())
    mean_resid = float(residuals.mean())
    ratio = mean_alpha / 4.4845e-6
    converged = all(r == "converged" for r in reasons)
    iter_ok = max(iterations) <= 10
    ratio_ok = 1.0 / 1.5 <= ratio <= 1.5
    resid_ok = 0.0082 <= mean_resid <= 0.0100
    ok = converged and iter_ok and ratio_ok and resid_ok and elapsed <= 120.0
    _verdict(5, "self-consistent weight", ok,
             f"mean alpha {mean_alpha:.4e} = {ratio:.3f} x 4.4845e-6 "
             f"(factor band [1/1.5, 1.5]), mean residual {mean_resid:.5f} "
             f"(band [0.0082, 0.0100]), max {max(iterations)} iterations "
             f"(cap 10), 5 seeds, {elapsed:.1f}s")
    assert converged, f"stop reasons: {reasons}"
    assert iter_ok, f"iteration counts {iterations} exceed 10"
    assert ratio_ok, f"mean alpha {mean_alpha:.4e} off 4.4845e-6 by factor {ratio:.3f}"
    assert resid_ok, f"mean residual {mean_resid:.5f} outside [0.0082, 0.0100]"
    assert elapsed <= 120.0


def test_6_two_dimensional_sensor_scaling(tmp_path):
    config = ExperimentConfig(
        dim=2,
        source="example2d",
        alpha_policy="rule",
        cells=31,
        n_steps=200,
        sigma=0.004,
        n_sensors=2500,
        sensor_counts=(2500, 10_000, 40_000, 90_000),
        seeds=(0, 1, 2),
        output_dir=str(tmp_path),
        label="acc_scaling",
    )
    t0 = time.time()
    fit_emp, fit_dual = run_scaling_study(config)
    elapsed = time.time() - t0
    emp_ok = fit_emp.r_squared >= 0.9 and fit_emp.slope > 0
    dual_ok = fit_dual.r_squared >= 0.9 and fit_dual.slope > 0
    ok = emp_ok and dual_ok and elapsed <= 900.0
    _verdict(6, "2-d sensor scaling", ok,
             f"empirical vs sqrt(alpha): R^2 {fit_emp.r_squared:.4f}, "
             f"dual vs alpha^(1/4): R^2 {fit_dual.r_squared:.4f} "
             f"(both need >= 0.9 with positive slope), "
             f"n in {{2500..90000}}, 3 seeds, {elapsed:.1f}s")
    assert emp_ok, f"empirical fit R^2 {fit_emp.r_squared:.4f}, slope {fit_emp.slope:.3e}"
    assert dual_ok, f"dual fit R^2 {fit_dual.r_squared:.4f}, slope {fit_dual.slope:.3e}"
    assert elapsed <= 900.0


def test_7_inversion_weight_growth():
    t0 = time.time()
    profile = quartic_profile()
    table = eigenvalue_scaling(profile, 1.0, k_max=400, dim=1)
    lo, hi = table.band(40, 400)
    band_lo, band_hi = np.pi**4 / 4.0, 4.0 * np.pi**4
    mus = (np.pi * np.arange(1, 401)) ** 2
    factors = profile.duhamel(mus, 1.0)
    positive = bool(np.all(factors > 0))
    elapsed = time.time() - t0
    ok = band_lo <= lo and hi <= band_hi and positive and elapsed <= 1.0
    _verdict(7, "spectral weight growth", ok,
             f"eta_k / k^4 in [{lo:.1f}, {hi:.1f}] for k in [40, 400] "
             f"(band [{band_lo:.1f}, {band_hi:.1f}]), "
             f"all 400 Duhamel factors positive: {positive}")
    assert lo >= band_lo and hi <= band_hi
    assert positive
    assert elapsed <= 1.0


def test_8_optimizer_invariants():
    t0 = time.time()
    profile = quartic_profile()
    mesh = build_interval_mesh(64)
    matrices = assemble(mesh)
    grid = TimeGrid(1.0, 64)
    sensors = make_sensors(1, 200, "uniform-grid", seed=0)
    sample = assemble_forward_gram(matrices, grid, profile, sensors)
    source = example_source_1d()
    clean = oracle_forward(source, profile, 1.0, sensors.points).values
    ms = synthesize(clean, NoiseSpec(model="Y1", sigma=0.009, seed=0), sensors)

    alphas = np.logspace(-8, -2, 13)
    results = [tikhonov.solve(sample, matrices.M, ms, a) for a in alphas]
    ne_worst = max(tikhonov.normal_equation_residual(sample, matrices.M, ms, r)
                   for r in results)

    # The solution must beat every perturbed candidate on the objective.
    mid = results[6]
    j_opt = tikhonov.objective(sample, matrices.M, ms, mid.coefficients, mid.alpha)
    rng = np.random.default_rng(7)
    gap_worst = np.inf
    scale = float(np.linalg.norm(mid.coefficients))
    for _ in range(100):
        direction = rng.standard_normal(mid.coefficients.size)
        direction *= scale / np.linalg.norm(direction)
        eps = 10.0 ** rng.uniform(-6.0, 0.0)
        j_pert = tikhonov.objective(sample, matrices.M, ms,
                                    mid.coefficients + eps * direction, mid.alpha)
        gap_worst = min(gap_worst, j_pert - j_opt)

    norms = np.array([r.source_norm for r in results])
    residuals = np.array([r.residual for r in results])
    slack = 1e-12
    monotone = (np.all(np.diff(norms) <= slack * norms[:-1])
                and np.all(np.diff(residuals) >= -slack * residuals[1:]))
    elapsed = time.time() - t0
    ok = ne_worst <= 1e-10 and gap_worst >= -1e-12 * j_opt and monotone and elapsed <= 30.0
    _verdict(8, "optimizer invariants", ok,
             f"worst normal-equation residual {ne_worst:.1e} (tol 1e-10), "
             f"worst objective gap over 100 perturbations {gap_worst:.2e} (must be >= 0), "
             f"norm/residual monotone along 13 weights: {monotone}, {elapsed:.1f}s")
    assert ne_worst <= 1e-10
    assert gap_worst >= -1e-12 * j_opt
    assert monotone
    assert elapsed <= 30.0


def test_9_noise_contracts():
    t0 = time.time()
    n = 100_000
    sigma = 0.01
    details = []
    all_ok = True
    for dist in ("gaussian", "uniform", "rademacher"):
        draw = draw_noise(NoiseSpec(model="Y1", sigma=sigma, distribution=dist, seed=3), n)
        var_ok = float(draw.var()) <= sigma**2 * (1.0 + 3.0 / np.sqrt(n))
        tails = draw_noise(NoiseSpec(model="Y2", sigma=sigma, distribution=dist, seed=4), n)
        tail_ok = all(
            float(np.mean(np.abs(tails) > z * sigma)) <= np.exp(-z**2 / 2.0) + 0.002
            for z in (2.0, 3.0)
        )
        same = np.array_equal(
            draw_noise(NoiseSpec(model="Y1", sigma=sigma, distribution=dist, seed=3), n), draw)
        fresh = not np.array_equal(
            draw_noise(NoiseSpec(model="Y1", sigma=sigma, distribution=dist, seed=5), n), draw)
        dist_ok = var_ok and tail_ok and same and fresh
        all_ok = all_ok and dist_ok
        details.append(f"{dist}: var {'ok' if var_ok else 'HIGH'}, "
                       f"tails {'ok' if tail_ok else 'FAT'}, "
                       f"seeds {'ok' if same and fresh else 'BROKEN'}")
    elapsed = time.time() - t0
    ok = all_ok and elapsed <= 10.0
    _verdict(9, "noise contracts", ok, "; ".join(details) + f", n=1e5, {elapsed:.1f}s")
    assert all_ok, "; ".join(details)
    assert elapsed <= 10.0
