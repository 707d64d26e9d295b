import math

import numpy as np
import pytest

from app.exceptions import ConfigError
from app.schemas.inference import EstimationResult
from app.utils.config_file import parse_key_values
from app.utils.csv_io import csv_text, format_value, read_path_csv


def test_format_value():
    assert format_value(0.1 + 0.2) == "0.3"
    assert format_value(1.0 / 3.0) == "0.333333333333333"
    assert format_value(np.float64(2.5)) == "2.5"
    assert format_value(7) == "7"
    assert format_value(None) == ""
    assert format_value(-math.inf) == "-inf"


def test_csv_text_uses_unix_line_endings():
    text = csv_text(["a", "b"], [{"a": 1, "b": 0.5}, {"a": 2, "b": None}])
    assert text == "a,b\n1,0.5\n2,\n"


def test_parse_key_values_skips_comments():
    values = parse_key_values("# run\n\nalpha = 1.5\nexample=example2 # trailing\n")
    assert values == {"alpha": "1.5", "example": "example2"}


def test_parse_key_values_unquotes_and_keeps_last_value():
    values = parse_key_values("example = \"example1\"\nseed = '7'\nseed = 9\n")
    assert values == {"example": "example1", "seed": "9"}


def test_parse_key_values_rejects_key_without_value():
    with pytest.raises(ConfigError) as exc:
        parse_key_values("alpha = 1\nreplicates\n", source="run.cfg")
    assert exc.value.key == "replicates"
    assert "run.cfg:2" in str(exc.value)


def test_parse_key_values_rejects_value_without_key():
    with pytest.raises(ConfigError) as exc:
        parse_key_values("= 3\n")
    assert exc.value.key is None


def test_estimation_result_schema_carries_example():
    example = EstimationResult.model_json_schema()["example"]
    assert example["theta_hat"] == 0.9844
    assert EstimationResult(**example).theoretical_stderr == 0.0542


def test_read_path_csv(tmp_path):
    path_file = tmp_path / "obs.csv"
    path_file.write_text("t,Y\n0,0\n0.5,0.1\n1,0.3\n")
    path = read_path_csv(str(path_file))
    assert path.dt == pytest.approx(0.5)
    assert path.n_steps == 2
    assert np.allclose(path.increments("Y"), [0.1, 0.2])


def test_read_path_csv_rejects_uneven_grid(tmp_path):
    path_file = tmp_path / "obs.csv"
    path_file.write_text("t,Y\n0,0\n0.5,0.1\n2,0.3\n")
    with pytest.raises(ConfigError) as info:
        read_path_csv(str(path_file))
    assert info.value.key == "input"


def test_read_path_csv_needs_observation_column(tmp_path):
    path_file = tmp_path / "obs.csv"
    path_file.write_text("t,U\n0,0\n1,1\n")
    with pytest.raises(ConfigError):
        read_path_csv(str(path_file))
