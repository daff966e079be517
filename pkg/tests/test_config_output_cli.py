import math

import numpy as np
import pytest

from fidsel import cli
from fidsel.config import ExperimentConfig, config_from_mapping, load_config, parse_config_text
from fidsel.datasets import gen_ode_data, load_dataset
from fidsel.errors import ConfigError, DomainError, EmptySelectionError
from fidsel.experiments import (
    emit_curves,
    evaluate_grid,
    fidelity_likelihood_curves,
    path_curves,
    threshold_truncate,
)
from fidsel.output import FidelityProfile, PosteriorGrid, read_profile, read_summary, write_profiles, write_summary

# -- config -------------------------------------------------------------------


def test_config_parse_and_dump_roundtrip():
    text = """
    # comment line
    experiment = example2
    seed = 3
    steps = 5000      # trailing comment
    thresholds = 0.3, 0.2
    gp_jitter = none
    data.var_corrupt = 25
    """
    cfg = parse_config_text(text)
    assert cfg.experiment == "example2" and cfg.seed == 3 and cfg.steps == 5000
    assert cfg.thresholds == (0.3, 0.2) and cfg.gp_jitter is None
    assert cfg.data == {"var_corrupt": 25}
    again = parse_config_text(cfg.dump())
    assert again == cfg


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.effective_burn_in == 20_000
    assert ExperimentConfig(experiment="ode").effective_burn_in == 50_000
    assert cfg.theta_prior().dim == 2 and ExperimentConfig(experiment="ode_gp").theta_prior().dim == 1
    assert cfg.beta_hyper().beta == 50.0 and cfg.invgamma_hyper().psi == 0.98


@pytest.mark.parametrize("values,field", [
    ({"experiment": "nope"}, "experiment"),
    ({"seed": "-1"}, "seed"),
    ({"seed": "1.5"}, "seed"),
    ({"steps": "0"}, "steps"),
    ({"grid_n": "1"}, "grid_n"),
    ({"grid_a": "3 1"}, "grid_a"),
    ({"thresholds": "1.2"}, "thresholds"),
    ({"thresholds": "a b"}, "thresholds"),
    ({"prior_sd": "-2"}, "prior_sd"),
    ({"fid_alpha": "0"}, "fid_alpha"),
    ({"gp_lengthscale": "0"}, "gp_sigma"),
    ({"svg": "maybe"}, "svg"),
    ({"prior_sd": "abc"}, "prior_sd"),
    ({"colour": "red"}, "colour"),
    ({"data.bogus": "1"}, "data.bogus"),
    ({"experiment": "curves", "data.noise_var": "1"}, "data"),
])
def test_config_errors_name_the_field(values, field):
    with pytest.raises(ConfigError) as info:
        config_from_mapping(values)
    assert info.value.field == field


def test_config_line_without_equals(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("experiment = example1\nsteps 10\n")
    with pytest.raises(ConfigError):
        load_config(p)


# -- output records -------------------------------------------------------------


def test_grid_integral_of_normalized_gaussian():
    a = np.linspace(-6, 6, 241)
    b = np.linspace(-8, 8, 321)
    logpdf = lambda th: -0.5 * (th[:, 0] ** 2 + (th[:, 1] / 1.5) ** 2) - math.log(2 * math.pi * 1.5)
    grid = evaluate_grid(logpdf, a, b, normalized=True)
    assert grid.integral() == pytest.approx(1.0, rel=1e-6)
    np.testing.assert_allclose(grid.argmax(), [0.0, 0.0], atol=1e-12)


def test_grid_validation():
    with pytest.raises(DomainError):
        PosteriorGrid([0, 1], [0, 1, 2], np.zeros((2, 2)), True)
    with pytest.raises(DomainError):
        PosteriorGrid([0, 1], [0, 1], np.array([[0, -np.inf], [0, 0]]), True)


def test_profile_roundtrip(tmp_path):
    p1 = FidelityProfile([0.5, 1.0], [0.7, 0.1], 0.3, 0.8, "fidelity")
    p2 = FidelityProfile([0.5, 1.0], [0.2, 0.9], 0.27, 1.0, "gp-euler")
    path = write_profiles(tmp_path / "p.csv", [p1, p2], {"seed": 0})
    back = read_profile(path, "gp-euler")
    np.testing.assert_array_equal(back.means, p2.means)
    assert back.prior_mean == 0.27 and read_profile(path).label == "fidelity"
    with pytest.raises(DomainError):
        read_profile(path, "missing")
    with pytest.raises(DomainError):
        FidelityProfile([0.0], [1.5], 0.3, 0.8)


def test_summary_roundtrip(tmp_path):
    path = write_summary(tmp_path / "s.txt", {"a": 1.25, "n": 3, "name": "x", "ok": True})
    assert read_summary(path) == {"a": 1.25, "n": 3, "name": "x", "ok": True}


# -- threshold truncation ---------------------------------------------------------


def ode_profile(ds, means):
    return FidelityProfile(ds.obs_times, means, 0.27, 1.0, "gp-euler")


def test_threshold_keeps_strictly_above():
    ds = gen_ode_data(seed=0).subset(np.arange(6))
    prof = ode_profile(ds, [0.9, 0.3, 0.31, 0.1, 0.5, 0.25])
    kept = threshold_truncate(prof, ds, 0.3)
    np.testing.assert_array_equal(kept.obs_index, [1, 3, 5])
    assert kept.meta["kept"] == 3 and kept.meta["threshold"] == 0.3
    np.testing.assert_array_equal(threshold_truncate(prof, ds, 0.0).obs_index, np.arange(1, 7))


def test_threshold_idempotent():
    ds = gen_ode_data(seed=0).subset(np.arange(10))
    prof = ode_profile(ds, np.linspace(0.05, 0.95, 10))
    once = threshold_truncate(prof, ds, 0.4)
    twice = threshold_truncate(prof, once, 0.4)
    np.testing.assert_array_equal(once.ys, twice.ys)
    np.testing.assert_array_equal(once.obs_index, twice.obs_index)


def test_threshold_errors():
    ds = gen_ode_data(seed=0).subset(np.arange(4))
    prof = ode_profile(ds, [0.1, 0.2, 0.1, 0.2])
    with pytest.raises(EmptySelectionError):
        threshold_truncate(prof, ds, 0.5)
    with pytest.raises(DomainError):
        threshold_truncate(prof, ds, 1.0)
    with pytest.raises(DomainError):
        threshold_truncate(ode_profile(ds.subset([0, 1]), [0.9, 0.9]), ds, 0.5)


# -- curves ---------------------------------------------------------------------


def test_likelihood_curves_normalized_and_decreasing():
    s = np.linspace(0, 8, 81)
    curves = fidelity_likelihood_curves((1.0, 2.0, 50.0), 2.0, s)
    for name, c in curves.items():
        assert c[0] == pytest.approx(1.0, rel=1e-14), name
        assert np.all(np.diff(c) < 0), name
    np.testing.assert_allclose(curves["gaussian"], np.exp(-0.5 * s * s), rtol=1e-15)
    # heavier tails than the Gaussian once the mismatch is large
    assert curves["alpha_2"][-1] > 1e3 * curves["gaussian"][-1]


def test_path_curve_endpoints():
    th = np.linspace(-5, 8, 301)
    c = path_curves(th, 0.0, 1.0, 4.0, 1.0, (0.0, 0.5, 1.0))
    np.testing.assert_allclose(c["p_0"], c["tau_0"], rtol=1e-14)
    np.testing.assert_allclose(c["p_1"], c["tau_1"], rtol=1e-14)
    np.testing.assert_allclose(c["p_0.5"], 0.5 * (c["p_0"] + c["p_1"]), rtol=1e-14)
    full = np.exp(-0.5 * (th - 2.0) ** 2 / 0.5) / math.sqrt(math.pi)
    np.testing.assert_allclose(c["tau_1"], full, rtol=1e-13)
    for k, v in c.items():
        assert np.trapezoid(v, th) == pytest.approx(1.0, rel=1e-4), k


def test_emit_curves_files(tmp_path):
    cfg = ExperimentConfig(experiment="curves", grid_n=21)
    res = emit_curves(cfg, tmp_path)
    names = sorted(p.name for p in res.files)
    assert names == sorted(f"{n}.{e}" for n in ("fidelity_likelihood", "fidelity_prior", "paths") for e in ("csv", "svg"))
    assert res.prior["tau"][0] == 0.0 and res.likelihood["mismatch"][-1] == 8.0


# -- command line -----------------------------------------------------------------


def test_cli_gen_and_threshold(tmp_path, capsys):
    data = tmp_path / "ode.csv"
    assert cli.main(["gen", "ode", "--seed", "2", "--out", str(data), "--set", "data.n_obs=6"]) == 0
    ds = load_dataset(data)
    assert len(ds) == 6 and ds.meta["seed"] == 2
    prof = tmp_path / "profile.csv"
    write_profiles(prof, [ode_profile(ds, [0.9, 0.1, 0.8, 0.05, 0.6, 0.2])])
    assert cli.main(["threshold", "--profile", str(prof), "--data", str(data), "--tau", "0.5"]) == 0
    kept = load_dataset(tmp_path / "ode_tau0.5.csv")
    np.testing.assert_array_equal(kept.obs_index, [1, 3, 5])
    assert "kept 3 of 6" in capsys.readouterr().out
    assert cli.main(["threshold", "--profile", str(prof), "--data", str(data), "--tau", "0.95"]) == 2
    assert cli.main(["threshold", "--profile", str(prof), "--data", str(data), "--tau", "0.5",
                     "--label", "nope"]) == 2
    assert cli.main(["threshold", "--profile", str(tmp_path / "missing.csv"), "--data", str(data),
                     "--tau", "0.5"]) == 2


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["gen", "example9"]) == 2
    assert cli.main(["gen", "example1", "--set", "data.bogus=1"]) == 2
    assert cli.main(["gen", "example1", "--set", "novalue"]) == 2
    cfg = tmp_path / "c.cfg"
    cfg.write_text("experiment = example1\nsteps = many\n")
    assert cli.main(["run", str(cfg)]) == 2
    assert cli.main(["run", str(tmp_path / "absent.cfg")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_numeric_failure_exit_code(tmp_path):
    # a vanishing GP lengthscale with zero jitter makes the kernel singular
    cfg = tmp_path / "gp.cfg"
    cfg.write_text("experiment = ode_gp\ngp_lengthscale = 1e6\ngp_jitter = 0\nsteps = 10\nburn_in = 0\n")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "run")]) == 3


def test_cli_curves_and_overrides(tmp_path):
    out = tmp_path / "curves"
    assert cli.main(["curves", "--out", str(out), "--set", "grid_n=11", "--set", "svg=false"]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["fidelity_likelihood.csv", "fidelity_prior.csv", "paths.csv"]
    assert "# grid_n=11" in (out / "paths.csv").read_text().splitlines()
    cfg = tmp_path / "c.cfg"
    cfg.write_text("experiment = example1\n")
    assert cli.main(["curves", str(cfg)]) == 2


def test_cli_run_small_ode(tmp_path, capsys):
    cfg = tmp_path / "ode.cfg"
    cfg.write_text("experiment = ode\nseed = 1\nsteps = 2000\nburn_in = 500\nthin = 10\nsvg = false\n"
                   "data.n_obs = 12\n")
    out = tmp_path / "run"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert f"to {out}" in text
    summary = read_summary(out / "summary.txt")
    assert summary["seed"] == 1 and summary["n_obs"] == 12
    assert summary["euler_selection_mean"] > summary["exact_selection_mean"]
    assert (out / "fidelity_profile.csv").exists()
