import io
import json

import pytest

from app.cli import dispatch, main, mc_config, parse_config
from app.config import settings
from app.exceptions import ConfigError
from app.schemas.model import ExampleTag
from app.utils.config_file import emit_config, parse_key_values


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    status = dispatch(parse_config(argv), out=out, err=err)
    return status, out.getvalue(), err.getvalue()


def test_defaults_apply_to_an_empty_file(tmp_path):
    config_file = tmp_path / "run.cfg"
    config_file.write_text("")
    config = parse_config(["simulate", "--config", str(config_file), "--example", "example1", "--alpha", "0", "--seed", "7"])
    assert config.example == ExampleTag.EXAMPLE1
    assert config.alpha == 0.0
    assert config.seed == 7
    assert (config.T, config.delta, config.dt, config.Sigma, config.sigma) == (25.0, 0.01, 0.02, 0.1, 0.1)
    assert (config.n_replicates, config.n_particles, config.n_bins) == (500, 1000, 25)


def test_flags_override_file_values(tmp_path):
    config_file = tmp_path / "run.cfg"
    config_file.write_text("example = example2  # second table\nalpha = 0.5\nT = 10\n")
    config = parse_config(["simulate", "--config", str(config_file), "--T", "5"])
    assert config.example == ExampleTag.EXAMPLE2
    assert config.T == 5.0
    assert config.alpha == 0.5


def test_negative_delta_is_rejected_with_key_name(tmp_path):
    config_file = tmp_path / "run.cfg"
    config_file.write_text("example = example1\nalpha = 0\ndelta = -1\n")
    with pytest.raises(ConfigError) as info:
        parse_config(["simulate", "--config", str(config_file)])
    assert info.value.key == "delta"


def test_unknown_keys_are_rejected(tmp_path):
    config_file = tmp_path / "run.cfg"
    config_file.write_text("example = example1\nbogus = 3\n")
    with pytest.raises(ConfigError) as info:
        parse_config(["fisher", "--config", str(config_file), "--alpha", "0"])
    assert info.value.key == "bogus"

    with pytest.raises(ConfigError) as info:
        parse_config(["fisher", "--example", "example1", "--alpha", "0", "--colour", "red"])
    assert info.value.key == "colour"


def test_missing_required_keys():
    with pytest.raises(ConfigError) as info:
        parse_config(["simulate", "--example", "example1"])
    assert info.value.key == "alpha"

    with pytest.raises(ConfigError) as info:
        parse_config(["simulate", "--alpha", "1"])
    assert info.value.key == "example"


def test_malformed_line_is_rejected():
    with pytest.raises(ConfigError):
        parse_key_values("example example1\n")


def test_seed_falls_back_to_environment(monkeypatch):
    monkeypatch.setattr(settings, "MSFM_SEED", 11)
    config = parse_config(["simulate", "--example", "example1", "--alpha", "0"])
    assert config.seed == 11


def test_emitted_config_parses_back(tmp_path):
    config = parse_config([
        "mc-table", "--example", "example3", "--alpha", "0.7", "--theta", "0.9", "--T", "12.5",
        "--delta", "0.02", "--Sigma", "0.2", "--seed", "5", "--n-replicates", "40",
        "--alphas", "0.7,1,1.8", "--deltas", "0.1,0.05,0.05", "--theta_lo", "0.1",
        "--method", "particle", "--jobs", "2", "--output", "out",
    ])
    config_file = tmp_path / "run.cfg"
    config_file.write_text(emit_config(config))
    assert parse_config(["mc-table", "--config", str(config_file)]) == config


def test_table_row_settings_build_mc_config(tmp_path):
    config_file = tmp_path / "table1.cfg"
    config_file.write_text("example = example1\nT = 25\ndelta = 0.01\nSigma = 0.1\nsigma = 0.1\nn_replicates = 500\n")
    config = parse_config(["mc-table", "--config", str(config_file), "--seed", "1"])
    row = mc_config(config, 1.0)
    assert row.true_alpha == 1.0
    assert row.n_replicates == 500
    assert row.root_seed == 1


def test_simulate_writes_path_csv():
    status, out, _ = _run(["simulate", "--example", "example1", "--alpha", "0", "--seed", "7", "--T", "1"])
    assert status == 0
    lines = out.splitlines()
    assert lines[0] == "t,Y,U,X"
    assert len(lines) == 52
    assert lines[1].split(",")[:2] == ["0", "0"]


def test_simulate_output_is_byte_identical_for_fixed_seed(tmp_path):
    for name in ("a.csv", "b.csv"):
        argv = ["simulate", "--example", "example3", "--alpha", "1", "--seed", "3", "--T", "2", "--output", str(tmp_path / name)]
        assert _run(argv)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_estimate_prints_result_json(tmp_path):
    profile = tmp_path / "profile.csv"
    status, out, _ = _run([
        "estimate", "--example", "example1", "--alpha", "1", "--seed", "3", "--T", "5", "--profile", str(profile),
    ])
    assert status == 0
    result = json.loads(out)
    assert set(result) == {"theta_hat", "clamped", "fisher", "theoretical_stderr", "loglik"}
    lines = profile.read_text().splitlines()
    assert lines[0] == "theta,loglik"
    assert len(lines) == settings.MLE_GRID_POINTS + 1


def test_estimate_reads_observation_file(tmp_path):
    path_file = tmp_path / "path.csv"
    common = ["--example", "example2", "--alpha", "1", "--seed", "4", "--T", "5"]
    assert _run(["simulate", *common, "--output", str(path_file)])[0] == 0
    _, direct, _ = _run(["estimate", *common])
    _, from_file, _ = _run(["estimate", "--example", "example2", "--input", str(path_file)])
    assert json.loads(from_file)["theta_hat"] == pytest.approx(json.loads(direct)["theta_hat"], abs=1e-5)


def test_filter_outputs():
    common = ["--alpha", "0.5", "--seed", "2", "--T", "1"]
    status, out, _ = _run(["filter", "--example", "example1", *common])
    assert status == 0
    assert out.splitlines()[0] == "t,pi_h,sigma_hat"

    status, out, _ = _run(["filter", "--example", "example1", "--method", "particle", "--n_particles", "50", *common])
    assert status == 0
    assert out.splitlines()[0] == "t,pi_h,ess"

    status, out, _ = _run(["filter", "--example", "example3", "--theta", "1", *common])
    assert status == 0
    rows = [line.split(",") for line in out.splitlines()[1:]]
    assert all(0.0 <= float(row[2]) <= 0.25 for row in rows)


def test_fisher_prints_closed_form_stderr():
    status, out, _ = _run(["fisher", "--example", "example1", "--alpha", "0"])
    assert status == 0
    result = json.loads(out)
    assert result["method"] == "closed"
    assert round(result["theoretical_stderr"], 4) == 0.09


def test_module_errors_become_one_line_diagnostics():
    status, out, err = _run(["simulate", "--example", "example1", "--alpha", "9", "--T", "1"])
    assert status == 1
    assert out == ""
    assert err.count("\n") == 1
    assert "theta" in err


def test_main_reports_config_errors(capsys, monkeypatch):
    monkeypatch.setattr("app.cli.configure_logging", lambda: None)
    assert main(["simulate", "--example", "example1", "--alpha", "0", "--delta", "-1"]) == 2
    assert "delta" in capsys.readouterr().err


def test_mc_table_and_hist_write_files(tmp_path):
    common = ["--example", "example1", "--n_replicates", "2", "--T", "2", "--seed", "1", "--output", str(tmp_path)]
    assert _run(["mc-table", *common, "--alphas", "1"])[0] == 0
    table = (tmp_path / "table.csv").read_text().splitlines()
    assert table[0] == "alpha,mean_estimate,empirical_stderr,theoretical_stderr,n_ok,n_fail"
    assert len(table) == 2

    assert _run(["hist", *common, "--alpha", "1", "--n_bins", "5"])[0] == 0
    assert (tmp_path / "hist.csv").read_text().splitlines()[0] == "bin_left,bin_right,density"
    assert len((tmp_path / "hist.csv").read_text().splitlines()) == 6
    assert len((tmp_path / "overlay.csv").read_text().splitlines()) == 202


def test_converge_writes_table():
    status, out, _ = _run([
        "converge", "--example", "example1", "--alpha", "0", "--deltas", "0.1,0.05",
        "--n_particles", "20", "--n_replicates", "2", "--T", "0.2", "--seed", "1",
    ])
    assert status == 0
    lines = out.splitlines()
    assert lines[0] == "delta,mse,stderr"
    assert len(lines) == 3
