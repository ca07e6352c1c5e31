import json
import pathlib

import pandas as pd
import pytest

from cli.main import EXIT_BAND, EXIT_CONFIG, EXIT_OK, main, parse_args

SMOKE = pathlib.Path(__file__).resolve().parents[1] / "configs" / "smoke.toml"

ORACLE_TOML = """
[[oracle.checks]]
name = "{name}"
sigma = 0.3
y = 1.5
c_plus = 0.5
c_minus = 0.5
k = 1
h_exponents = [14, 16, 18, 20]
{extra}
"""

DAILY_TOML = """
[model.diffusion]
kind = "heston"
kappa = 5.0
theta = 0.04
xi = 0.0
rho = 0.0
v0 = 0.09

[model.jumps]
c = 0.028
g = 2.318
m = 4.025
y_index = 1.25

[grid]
horizon_t = 0.015873015873015872
n_steps = 400

[run]
paths = 2
blocks = 4
substeps = 2
master_seed = 3

[[estimators]]
name = "nb"
kind = "nb"

[daily]
estimator = "nb"
days = [1, 4]
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _out(tmp_path, name="out"):
    out = tmp_path / name
    out.mkdir()
    return out


def test_smoke_mc_table(tmp_path):
    out = _out(tmp_path)
    assert main(["mc-table", "--config", str(SMOKE), "--out", str(out), "--log-level", "WARNING"]) == EXIT_OK
    table = pd.read_csv(out / "mc_table.csv")
    assert list(table["estimator"]) == ["rv", "trqv", "trqv_inf", "one_step_pb", "two_step_nb"]
    assert table["error"].isna().all()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert set(manifest["outputs"]) == {"mc_table.csv", "mc_table.json"}
    assert len((out / "runs.jsonl").read_text().splitlines()) == 1
    assert set(manifest["timings"]) == {"experiment"}


def test_mc_table_is_independent_of_thread_count(tmp_path):
    serial, parallel = _out(tmp_path, "serial"), _out(tmp_path, "parallel")
    base = ["mc-table", "--config", str(SMOKE), "--seed", "11", "--paths", "4"]
    assert main(base + ["--out", str(serial), "--threads", "1"]) == EXIT_OK
    assert main(base + ["--out", str(parallel), "--threads", "2"]) == EXIT_OK
    assert (serial / "mc_table.csv").read_bytes() == (parallel / "mc_table.csv").read_bytes()


def test_missing_output_directory_is_a_usage_error(tmp_path):
    assert main(["mc-table", "--config", str(SMOKE), "--out", str(tmp_path / "missing")]) == EXIT_CONFIG
    assert not (tmp_path / "missing").exists()


def test_invalid_configuration_exits_with_config_status(tmp_path, capsys):
    out = _out(tmp_path)
    config = _write(tmp_path, "bad.toml", '[model.diffusion]\nsigma = 0.2\n\n[[estimators]]\nname = "x"\nkind = "median"\n')
    assert main(["mc-table", "--config", str(config), "--out", str(out)]) == EXIT_CONFIG
    assert "estimators" in capsys.readouterr().err
    assert json.loads((out / "manifest.json").read_text())["status"] == "exit 1"

    broken = _write(tmp_path, "broken.toml", "[grid\nn_steps = 3\n")
    assert main(["simulate", "--config", str(broken), "--out", str(out)]) == EXIT_CONFIG


def test_oracle_check_within_band(tmp_path):
    out = _out(tmp_path)
    config = _write(tmp_path, "oracle.toml", ORACLE_TOML.format(name="stable", extra=""))
    assert main(["oracle-check", "--config", str(config), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "oracle_stable.json").read_text())
    assert report["passed"] is True
    assert len(report["rows"]) == 4
    assert (out / "oracle_summary.csv").exists()


def test_oracle_negative_control_fails(tmp_path):
    out = _out(tmp_path)
    config = _write(tmp_path, "oracle.toml", ORACLE_TOML.format(name="stable", extra=""))
    argv = ["oracle-check", "--config", str(config), "--out", str(out), "--coef-scale", "2"]
    assert main(argv) == EXIT_BAND
    summary = pd.read_csv(out / "oracle_summary.csv")
    assert not summary["passed"].iloc[0]


def test_gaussian_oracle_passes(tmp_path):
    out = _out(tmp_path)
    text = ORACLE_TOML.format(name="gauss", extra="gaussian = true")
    config = _write(tmp_path, "oracle.toml", text)
    assert main(["oracle-check", "--config", str(config), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "oracle_gauss.json").read_text())["exponential_regime"] is True


def test_coef_scale_is_only_offered_by_oracle_check():
    assert parse_args(["oracle-check", "--config", "x.toml"]).coef_scale == 1.0
    with pytest.raises(SystemExit):
        parse_args(["mc-table", "--config", "x.toml", "--coef-scale", "2"])


def test_daily_iv_with_deterministic_variance(tmp_path):
    out = _out(tmp_path)
    config = _write(tmp_path, "daily.toml", DAILY_TOML)
    assert main(["daily-iv", "--config", str(config), "--out", str(out)]) == EXIT_OK
    daily = pd.read_csv(out / "daily.csv")
    assert len(daily) == 8
    summary = pd.read_csv(out / "daily_summary.csv", dtype={"day": str})
    assert set(summary["day"]) == {"1", "4", "mean"}
    deviation = pd.read_csv(out / "daily_closed_form.csv")["max_abs_deviation"].iloc[0]
    assert deviation < 1e-6


def test_daily_iv_rejects_unknown_days(tmp_path):
    out = _out(tmp_path)
    config = _write(tmp_path, "daily.toml", DAILY_TOML.replace("days = [1, 4]", "days = [0, 9]"))
    assert main(["daily-iv", "--config", str(config), "--out", str(out)]) == EXIT_CONFIG


def test_simulate_dumps_increments(tmp_path):
    out = _out(tmp_path)
    assert main(["simulate", "--config", str(SMOKE), "--out", str(out), "--paths", "1"]) == EXIT_OK
    increments = pd.read_csv(out / "increments.csv")
    assert len(increments) == 100
    block_iv = pd.read_csv(out / "block_iv.csv")
    assert block_iv["iv"].iloc[0] == pytest.approx(0.04, rel=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert {"increments.csv", "block_iv.csv"} <= set(manifest["outputs"])


def test_mc_table_writes_per_path_estimates(tmp_path):
    text = SMOKE.read_text(encoding="utf-8").replace("master_seed = 7", "master_seed = 7\nwrite_paths = true")
    config = _write(tmp_path, "paths.toml", text)
    out = _out(tmp_path)
    assert main(["mc-table", "--config", str(config), "--out", str(out), "--log-level", "WARNING"]) == EXIT_OK
    long = pd.read_csv(out / "mc_paths.csv")
    assert len(long) == 2 * 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"mc_table.csv", "mc_paths.csv"} <= set(manifest["outputs"])


def test_clt_hist_reports_ks_band(tmp_path):
    text = SMOKE.read_text(encoding="utf-8") + '\n[clt]\nestimators = ["rv", "two_step_nb"]\nks_band = 0.01\nbins = 4\n'
    config = _write(tmp_path, "clt.toml", text)
    out = _out(tmp_path)
    argv = ["clt-hist", "--config", str(config), "--out", str(out), "--paths", "6", "--log-level", "WARNING"]
    assert main(argv) == EXIT_OK
    ks = pd.read_csv(out / "clt_ks.csv")
    assert list(ks.columns) == ["estimator", "paths", "seed", "ks", "ks_band", "within_band"]
    assert list(ks["estimator"]) == ["rv", "two_step_nb"]
    assert (ks["seed"] == 7).all()
    assert (ks["paths"] == 6).all()
    assert not ks["within_band"].any()
    assert len(pd.read_csv(out / "clt_errors.csv")) == 12
    assert (out / "clt_histogram.csv").exists()
