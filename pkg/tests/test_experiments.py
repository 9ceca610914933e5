import os

import numpy as np
import pytest

from wavesource.errors import ConfigError, InsufficientDataError
from wavesource.experiments import (
    ExperimentConfig,
    fit_linear,
    fit_rate,
    profile_from_spec,
    read_table,
    run_alpha_sweep,
    run_h_convergence,
    run_scaling_study,
    run_self_consistent,
    usable_levels,
    write_table,
)


def test_config_defaults_validate():
    cfg = ExperimentConfig()
    assert cfg.validate() is cfg


def test_config_from_file_round_trip(tmp_path):
    path = tmp_path / "study.cfg"
    path.write_text(
        "# comment line\n"
        "dim = 1\n"
        "n-steps = 48   # hyphens work too\n"
        "cells = 48\n"
        "alpha_sweep = 1e-6, 1e-5\n"
        "seeds = 3, 4\n"
        "sigma = 0.002\n"
        "\n"
    )
    cfg = ExperimentConfig.from_file(path)
    assert cfg.n_steps == 48
    assert cfg.alpha_sweep == (1e-6, 1e-5)
    assert cfg.seeds == (3, 4)
    # keyword overrides win over file values
    cfg2 = ExperimentConfig.from_file(path, sigma=0.5)
    assert cfg2.sigma == 0.5


def test_config_from_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("cells = 32\nwavelength = 3\n")
    with pytest.raises(ConfigError, match="bad.cfg:2.*wavelength"):
        ExperimentConfig.from_file(path)


def test_config_from_file_rejects_bad_value(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("cells = thirty\n")
    with pytest.raises(ConfigError, match="bad value for cells"):
        ExperimentConfig.from_file(path)


def test_config_hash_is_deterministic_and_sensitive():
    a = ExperimentConfig()
    b = ExperimentConfig()
    c = ExperimentConfig(sigma=0.01)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 12


@pytest.mark.parametrize(
    "kwargs, fragment",
    [
        (dict(dim=3), "dim"),
        (dict(cells=1), "cells"),
        (dict(sigma=-1.0), "sigma"),
        (dict(seeds=()), "seeds"),
        (dict(layout="spiral"), "layout"),
        (dict(alpha_policy="best"), "policy"),
        (dict(alpha_policy="sweep"), "alpha_sweep"),
        (dict(alpha_policy="sweep", alpha_sweep=(1e-4, 1e-5)), "increasing"),
        (dict(sigma_from_rule=True, alpha_policy="sweep", alpha_sweep=(1e-5,)), "fixed"),
        (dict(source="example2d"), "source"),
        (dict(profile="expr:1+t"), "profile"),
        (dict(mesh_levels=(8, 8, 16)), "mesh_levels"),
        (dict(dim=2, source="example2d", n_sensors=300), "perfect-square"),
        (dict(cells=2000), "desk-scale"),
        (dict(n_sensors=200000), "desk-scale"),
    ],
)
def test_config_validation_errors(kwargs, fragment):
    with pytest.raises(ConfigError, match=fragment):
        ExperimentConfig(**kwargs).validate()


def test_desk_cap_lifts_with_allow_large():
    cfg = ExperimentConfig(cells=2000, n_steps=2000, allow_large=True)
    cfg.validate()


def test_resolved_sigma_matches_rule():
    from wavesource.alpha_select import rule_alpha

    cfg = ExperimentConfig(alpha=1e-6, sigma_from_rule=True, n_sensors=300)
    sigma = cfg.resolved_sigma()
    # feeding the resolved sigma back through the rule returns the alpha
    assert rule_alpha(sigma, 300, 1, np.sqrt(np.pi / 8.0)) == pytest.approx(1e-6, rel=1e-10)


def test_profile_from_spec_quartic():
    prof = profile_from_spec("t4")
    assert prof.g(2.0) == pytest.approx(16.0)
    assert prof.duhamel is not None


def test_profile_from_spec_expression():
    prof = profile_from_spec("expr:t**4 * (1 + t)", t_final=1.0)
    assert prof.g(0.5) == pytest.approx(0.09375)
    # the scheme needs g and its first three derivatives to vanish at 0
    with pytest.raises(ValueError):
        profile_from_spec("expr:t**3")
    with pytest.raises(ConfigError):
        profile_from_spec("quintic")


def test_fit_rate_recovers_exact_power_law():
    h = np.array([0.5, 0.25, 0.125, 0.0625])
    fit = fit_rate(h, 3.0 * h**2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.space == "log-log"


def test_fit_rate_needs_three_points():
    with pytest.raises(InsufficientDataError):
        fit_rate([0.5, 0.25], [1.0, 0.5])
    with pytest.raises(ValueError):
        fit_rate([0.5, 0.25, 0.125], [1.0, -0.5, 0.2])


def test_fit_linear_flags_degenerate_spread():
    fit = fit_linear([1.0, 2.0, 3.0], [0.7, 0.7, 0.7])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.r_squared == 0.0
    assert fit.note != ""


def test_usable_levels_truncates_at_plateau():
    assert usable_levels([1.0, 0.5, 0.25, 0.2, 0.19]) == 3
    assert usable_levels([1.0, 0.25, 0.0625]) == 3
    assert usable_levels([1.0, 0.9]) == 1
    assert usable_levels([1.0]) == 1


def test_write_read_table_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, {"study": "demo", "sigma": 0.25},
                ["h", "err", "tag"], [[0.5, 1e-3, "a"], [0.25, 2.5e-4, "b"]])
    meta, cols = read_table(path)
    assert meta["study"] == "demo"
    assert float(meta["sigma"]) == 0.25
    np.testing.assert_allclose(cols["h"], [0.5, 0.25])
    np.testing.assert_allclose(cols["err"], [1e-3, 2.5e-4])
    assert list(cols["tag"]) == ["a", "b"]


# ---------------------------------------------------------------------------
# study runs (small settings, values frozen from direct measurement)


def test_h_convergence_noiseless_rates(tmp_path):
    # deterministic run: second-order empirical rate over the usable
    # levels; the dual-norm error of this fractional-power source decays
    # near h^1.4 without noise (projection-limited), frozen here
    cfg = ExperimentConfig(dim=1, source="example1d", sigma=0.0, alpha_policy="fixed",
                           alpha=1e-6, n_sensors=300, cells=64, n_steps=64,
                           seeds=(0,), output_dir=str(tmp_path))
    fit_emp, fit_dual = run_h_convergence(cfg)
    assert fit_emp.slope == pytest.approx(1.93, abs=0.1)
    assert len(fit_emp.abscissa) == 4
    assert fit_dual.slope == pytest.approx(1.41, abs=0.1)
    assert len(fit_dual.abscissa) == 5
    meta, cols = read_table(tmp_path / "rates.csv")
    assert {"h", "tau", "n", "sigma", "alpha", "seed", "config",
            "err_empirical", "err_hminus1", "used_empirical", "used_hminus1"} <= set(cols)
    assert (tmp_path / "rates.svg").exists()


def test_h_convergence_noisy_rates_near_first_order_dual(tmp_path):
    # with noise tied to the weight by the balancing rule the dual-norm
    # error decays close to first order over its usable levels
    cfg = ExperimentConfig(dim=1, source="example1d", sigma_from_rule=True,
                           alpha_policy="fixed", alpha=1e-6, n_sensors=300,
                           cells=64, n_steps=64, seeds=tuple(range(5)),
                           output_dir=str(tmp_path))
    _, fit_dual = run_h_convergence(cfg)
    assert fit_dual.slope == pytest.approx(1.0, abs=0.3)


def test_h_convergence_needs_three_usable_levels(tmp_path):
    cfg = ExperimentConfig(mesh_levels=(32, 64), sigma=0.0, alpha_policy="fixed",
                           alpha=1e-6, output_dir=str(tmp_path))
    with pytest.raises(InsufficientDataError):
        run_h_convergence(cfg)


def test_h_convergence_flat_levels_error(tmp_path):
    # every paired level sits on the weight floor: no usable window
    cfg = ExperimentConfig(dim=1, source="example1d", sigma=0.0, alpha_policy="fixed",
                           alpha=1e-2, mesh_levels=(32, 64, 128), n_sensors=100,
                           seeds=(0,), output_dir=str(tmp_path))
    with pytest.raises(InsufficientDataError, match="usable"):
        run_h_convergence(cfg)


def test_alpha_sweep_argmin_and_schema(tmp_path):
    cfg = ExperimentConfig(dim=1, source="example1d", cells=32, n_steps=32,
                           n_sensors=100, sigma=0.009, alpha_policy="sweep",
                           alpha_sweep=(1e-6, 1e-5, 1e-4), seeds=(0, 1),
                           output_dir=str(tmp_path))
    res = run_alpha_sweep(cfg)
    assert res.argmin_empirical in cfg.alpha_sweep
    assert res.argmin_hminus1 in cfg.alpha_sweep
    assert res.mean_empirical.shape == (3,)
    meta, cols = read_table(res.csv_path)
    assert float(meta["argmin_empirical"]) == res.argmin_empirical
    # per seed, the misfit residual grows with the weight
    for seed in (0, 1):
        mask = cols["seed"] == seed
        resid = cols["residual_n"][mask][np.argsort(cols["alpha"][mask])]
        assert np.all(np.diff(resid) >= 0)
    assert os.path.exists(res.plot_path)


def test_alpha_sweep_noiseless_prefers_smallest_weight(tmp_path):
    cfg = ExperimentConfig(dim=1, source="example1d", cells=32, n_steps=32,
                           n_sensors=100, sigma=0.0, alpha_policy="sweep",
                           alpha_sweep=(1e-8, 1e-6, 1e-4, 1e-2), seeds=(0,),
                           output_dir=str(tmp_path))
    res = run_alpha_sweep(cfg)
    assert res.argmin_empirical == 1e-8
    assert np.all(np.diff(res.mean_empirical) > 0)


def test_self_consistent_run_trace_and_snapshot(tmp_path):
    cfg = ExperimentConfig(dim=1, source="example1d", cells=64, n_steps=64,
                           n_sensors=300, sigma=0.009,
                           alpha_policy="self-consistent", seeds=(0, 1),
                           output_dir=str(tmp_path))
    run = run_self_consistent(cfg)
    assert run.note == ""
    assert len(run.reports) == run.trace.iterations
    assert set(run.per_seed) == {0, 1}
    for alpha, residual, iterations, reason in run.per_seed.values():
        assert reason == "converged"
        assert iterations <= 15
        assert 0 < alpha < 1e-3
    # the first seed's trace is the exported one
    assert run.per_seed[0][0] == run.trace.alphas[-1]
    meta, cols = read_table(run.csv_path)
    assert {"iter", "residual_n", "f_norm", "err_empirical"} <= set(cols)
    snap_meta, snap = read_table(run.snapshot_csv)
    # snapshot spans all vertices and obeys the boundary condition
    assert snap["x"][0] == 0.0 and snap["x"][-1] == 1.0
    assert snap["f_rec"][0] == 0.0 and snap["f_rec"][-1] == 0.0
    assert os.path.exists(run.plot_path) and os.path.exists(run.snapshot_plot)


def test_self_consistent_noiseless_is_degenerate_but_finishes(tmp_path):
    cfg = ExperimentConfig(dim=1, source="example1d", cells=32, n_steps=32,
                           n_sensors=100, sigma=0.0,
                           alpha_policy="self-consistent", seeds=(0,),
                           output_dir=str(tmp_path))
    run = run_self_consistent(cfg)
    assert "degenerate" in run.note
    assert run.trace.stop_reason == "converged"
    assert run.result.alpha < 1e-8


def test_scaling_study_one_dimensional(tmp_path):
    cfg = ExperimentConfig(dim=1, source="example1d", cells=32, n_steps=32,
                           n_sensors=100, sigma=0.004, alpha_policy="rule",
                           sensor_counts=(100, 300, 1000), seeds=(0, 1),
                           output_dir=str(tmp_path))
    fit_emp, fit_dual = run_scaling_study(cfg)
    assert fit_emp.space == "linear"
    assert fit_emp.r_squared > 0.9
    assert fit_dual.r_squared > 0.9
    assert fit_emp.slope > 0
    meta, cols = read_table(tmp_path / "scaling.csv")
    assert {"n", "alpha", "err_empirical", "err_hminus1"} <= set(cols)


def test_scaling_study_rejects_undersampled_weight(tmp_path):
    # sigma so small that the rule weight breaks the sampling constraint
    cfg = ExperimentConfig(dim=2, source="example2d", cells=8, n_steps=16,
                           n_sensors=2500, sigma=1e-5, alpha_policy="rule",
                           sensor_counts=(2500, 10000, 40000), seeds=(0,),
                           output_dir=str(tmp_path))
    with pytest.raises(ConfigError, match="constraint"):
        run_scaling_study(cfg)


def test_study_rows_carry_full_metadata(tmp_path):
    cfg = ExperimentConfig(dim=1, source="example1d", cells=32, n_steps=32,
                           n_sensors=100, sigma=0.009, alpha_policy="sweep",
                           alpha_sweep=(1e-5, 1e-4), seeds=(1,),
                           output_dir=str(tmp_path))
    res = run_alpha_sweep(cfg)
    meta, cols = read_table(res.csv_path)
    assert np.all(cols["h"] == 1.0 / 32)
    assert np.all(cols["tau"] == 1.0 / 32)
    assert np.all(cols["n"] == 100)
    assert np.all(cols["sigma"] == 0.009)
    assert np.all(cols["seed"] == 1)
    assert set(cols["config"]) == {cfg.config_hash()}
