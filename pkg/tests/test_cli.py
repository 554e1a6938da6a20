import json
from pathlib import Path

import pytest

from lfmkit.cli import ConfigError, load_config, main
from lfmkit.experiments import (BallisticConfig, CustomConfig, TfConfig,
                                custom_fit, make_custom_dataset, read_data_csv,
                                run_ballistic_experiment, run_tf_experiment)


TINY_TF = """\
[experiment]
kind = tf

[tf]
rows = saturation:1.0
n_obs = 5
eval_points = 41
replications = 2
seed = 99
"""

TINY_BALLISTIC = """\
[experiment]
kind = ballistic

[ballistic]
n_obs = 20
substeps = 8
sim_substeps = 10
mcmc_enabled = false
replications = 1
seed = 7

[files]
data = {data}
"""

TINY_CUSTOM = """\
[experiment]
kind = custom

[custom]
n_obs = 12
t_end = 3.0
seed = 3
mcmc_samples = 40
fit_budget = 40

[files]
data = {data}
"""


def _dircmp(a: Path, b: Path):
    fa = sorted(p.name for p in a.iterdir() if p.is_file())
    fb = sorted(p.name for p in b.iterdir() if p.is_file())
    assert fa == fb
    for name in fa:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_load_config_errors(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nkind = warp\n")
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        load_config(p)
    p.write_text("[tf]\nseed = 1\n")
    with pytest.raises(ConfigError, match="missing"):
        load_config(p)
    p.write_text("[experiment]\nkind = tf\n\n[tf]\nwarp_factor = 9\n")
    with pytest.raises(ConfigError, match="unknown option"):
        load_config(p)
    p.write_text("[experiment]\nkind = tf\n\n[tf]\nn_obs = few\n")
    with pytest.raises(ConfigError, match="n_obs"):
        load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_load_config_tf_rows_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nkind = tf\n\n[tf]\n"
                 "rows = saturation:0.5, exponential\nseed = 5\n")
    kind, cfg, files = load_config(p)
    assert kind == "tf"
    assert cfg.rows == (("saturation", 0.5), ("exponential", 1.0))
    assert cfg.seed == 5


def test_cli_exit_codes_config_error(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nkind = warp\n")
    assert main(["tf", "--config", str(p)]) == 2


def test_cli_simulate_then_filter_custom(tmp_path):
    cfgfile = tmp_path / "custom.ini"
    out = tmp_path / "out"
    cfgfile.write_text(TINY_CUSTOM.format(data=out / "data.csv"))
    assert main(["simulate", "--config", str(cfgfile), "--out", str(out)]) == 0
    assert (out / "truth.csv").exists()
    data = read_data_csv(out / "data.csv")
    assert len(data) == 12
    assert main(["smooth", "--config", str(cfgfile), "--out", str(out)]) == 0
    smooth_lines = (out / "smooth.csv").read_text().splitlines()
    assert smooth_lines[0] == "t,m_0,m_1,diagP_0,diagP_1"
    summary = json.loads((out / "filter_summary.json").read_text())
    assert summary["diverged"] is False
    assert main(["mcmc", "--config", str(cfgfile), "--out", str(out)]) == 0
    chain_header = (out / "chain.csv").read_text().splitlines()[0]
    assert chain_header == "iter,logpost,sigma_m,ell"
    assert main(["fit", "--config", str(cfgfile), "--out", str(out)]) == 0
    fit = json.loads((out / "fit.json").read_text())
    assert fit["names"] == ["sigma_m", "ell", "noise_std"]


def test_cli_filter_rejects_bad_data(tmp_path):
    cfgfile = tmp_path / "custom.ini"
    out = tmp_path / "out"
    out.mkdir()
    data_path = out / "data.csv"
    cfgfile.write_text(TINY_CUSTOM.format(data=data_path))
    data_path.write_text("t,y_0\n1.0,0.5\n0.5,0.2\n")
    assert main(["filter", "--config", str(cfgfile), "--out", str(out)]) == 2
    data_path.write_text("t,y_0\n1.0,0.5\n2.0\n")
    assert main(["filter", "--config", str(cfgfile), "--out", str(out)]) == 2
    data_path.unlink()
    assert main(["filter", "--config", str(cfgfile), "--out", str(out)]) == 2


def test_read_data_csv_reports_line_numbers(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("t,y_0\n0.5,1.0\nbad,2.0\n")
    with pytest.raises(ValueError, match="line 3"):
        read_data_csv(p)


def test_tf_experiment_determinism(tmp_path):
    cfg = TfConfig(rows=(("saturation", 1.0),), n_obs=5, eval_points=41,
                   replications=2, seed=99)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    run_tf_experiment(cfg, out_a)
    run_tf_experiment(cfg, out_b)
    _dircmp(out_a, out_b)
    rows = (out_a / "metrics.csv").read_text().splitlines()
    assert rows[0] == "link,gamma,rep,rmse,diverged,error"
    assert len(rows) == 3
    table = json.loads((out_a / "summary.json").read_text())["table"]
    assert table[0]["n_reps"] == 2


def test_ballistic_experiment_determinism_and_pipeline_match(tmp_path):
    cfg = BallisticConfig(n_obs=20, substeps=8, sim_substeps=10,
                          mcmc_enabled=False, replications=1, seed=7)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    run_ballistic_experiment(cfg, out_a)
    run_ballistic_experiment(cfg, out_b)
    _dircmp(out_a, out_b)

    # the simulate/filter pipeline subcommands reproduce the experiment's
    # artifacts byte-for-byte (same code path, same streams)
    out_c = tmp_path / "c"
    cfgfile = tmp_path / "ballistic.ini"
    cfgfile.write_text(TINY_BALLISTIC.format(data=out_c / "data.csv"))
    assert main(["simulate", "--config", str(cfgfile), "--out", str(out_c)]) == 0
    assert (out_c / "truth.csv").read_bytes() == (out_a / "truth.csv").read_bytes()
    assert (out_c / "data.csv").read_bytes() == (out_a / "data.csv").read_bytes()
    assert main(["filter", "--config", str(cfgfile), "--out", str(out_c)]) == 0
    assert (out_c / "filter.csv").read_bytes() == (out_a / "filter.csv").read_bytes()


def test_tf_cli_runs_tiny(tmp_path):
    cfgfile = tmp_path / "tf.ini"
    cfgfile.write_text(TINY_TF)
    out = tmp_path / "out"
    assert main(["tf", "--config", str(cfgfile), "--out", str(out)]) == 0
    assert (out / "table.csv").exists()
    assert main(["ballistic", "--config", str(cfgfile), "--out", str(out)]) == 2


def test_cli_reps_threads_overrides(tmp_path):
    cfgfile = tmp_path / "tf.ini"
    cfgfile.write_text(TINY_TF)
    out = tmp_path / "out"
    assert main(["tf", "--config", str(cfgfile), "--out", str(out),
                 "--reps", "1", "--seed", "123", "--threads", "2"]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2   # header + 1 replication


def test_custom_fit_recovers_noise_std():
    # generous data so the noise level is identified well
    cfg = CustomConfig(n_obs=250, t_end=50.0, noise_std=0.3, seed=11,
                       fit_budget=150, substeps=2)
    model, meas, x0, data, traj = make_custom_dataset(cfg, 0)
    res = custom_fit(cfg, data)
    noise_hat = res.theta[2]
    assert abs(noise_hat - 0.3) / 0.3 < 0.2


def test_env_var_default_outdir(tmp_path, monkeypatch):
    cfgfile = tmp_path / "custom.ini"
    out = tmp_path / "envout"
    cfgfile.write_text(TINY_CUSTOM.format(data=out / "data.csv"))
    monkeypatch.setenv("LFM_KIT_OUT", str(out))
    monkeypatch.chdir(tmp_path)
    assert main(["simulate", "--config", str(cfgfile)]) == 0
    assert (out / "truth.csv").exists()
