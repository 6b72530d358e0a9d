import json
import math

import numpy as np
import pytest

from rwre import cli
from rwre.config import EXPERIMENTS, parse_config
from rwre.errors import ConfigError, NumericalError, ResourceError
from rwre.experiments import run_experiment


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


CLASSIFY = """\
# two-point law that drifts to the right
experiment = classify1d
law = two_point
p_values = 0.3, 0.9
seed = 11
budget = 5000
n = 2000
replicas = 40
"""


# configuration parsing


def test_parse_reports_line_of_unknown_key():
    text = CLASSIFY + "velcoity = 3\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "classify1d")
    assert exc.value.line == 9
    assert "velcoity" in str(exc.value)


def test_parse_rejects_duplicate_key():
    with pytest.raises(ConfigError) as exc:
        parse_config(CLASSIFY + "seed = 3\n")
    assert exc.value.line == 9


def test_parse_rejects_bad_value_and_law_key_mismatch():
    with pytest.raises(ConfigError) as exc:
        parse_config(CLASSIFY.replace("n = 2000", "n = 2.5"))
    assert exc.value.line == 7
    with pytest.raises(ConfigError):
        parse_config(CLASSIFY + "alpha = 1, 1\n")


def test_parse_rejects_experiment_mismatch():
    with pytest.raises(ConfigError):
        parse_config(CLASSIFY, "velocity1d")


def test_parse_rejects_invalid_law():
    with pytest.raises(ConfigError):
        parse_config(CLASSIFY.replace("0.3, 0.9", "0.3, 1.4"))


def test_defaults_are_filled():
    cfg = parse_config("experiment = kks\nlaw = two_point\np_values = 0.2, 0.8\n")
    assert cfg.params == {"samples": 200_000}
    assert cfg.master_seed == 0 and cfg.level == 0.95


def test_every_experiment_has_a_subcommand():
    names = set(cli.build_parser()._subparsers._group_actions[0].choices)
    assert names == set(EXPERIMENTS) | {"run"}


# runs


def test_classify_verdict_and_byte_identical_rerun(tmp_path):
    cfg = write(tmp_path, CLASSIFY)
    outs = []
    for k in range(2):
        d = tmp_path / f"out{k}"
        assert cli.main(["classify1d", "--config", cfg, "--out", str(d)]) == 0
        outs.append(((d / "classify1d.csv").read_bytes(), (d / "classify1d.json").read_bytes()))
    assert outs[0] == outs[1]
    doc = json.loads(outs[0][1])
    assert doc["experiment"] == "classify1d"
    assert doc["seed"] == 11
    assert doc["estimates"]["verdict"] == "TransientRight"
    assert set(doc) == {"experiment", "seed", "params", "estimates", "runtime"}
    assert (tmp_path / "out0" / "classify1d.runtime.json").exists()


def test_seed_override_changes_only_the_seed(tmp_path):
    cfg = write(tmp_path, CLASSIFY)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path), "--seed", "5"]) == 0
    doc = json.loads((tmp_path / "classify1d.json").read_text())
    assert doc["seed"] == 5


def test_config_error_exit_code_and_message(tmp_path, capsys):
    cfg = write(tmp_path, CLASSIFY + "velcoity = 3\n")
    assert cli.main(["classify1d", "--config", cfg, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "configuration error" in err and "line 9" in err


def test_missing_config_file_is_a_config_error(tmp_path):
    assert cli.main(["kks", "--config", str(tmp_path / "none.cfg")]) == 2


def test_resource_guard_and_force(tmp_path):
    text = CLASSIFY + "op_cap = 1000\n"
    cfg = parse_config(text)
    with pytest.raises(ResourceError):
        run_experiment(cfg)
    path = write(tmp_path, text)
    assert cli.main(["classify1d", "--config", path, "--out", str(tmp_path)]) == 3
    assert cli.main(["classify1d", "--config", path, "--out", str(tmp_path), "--force"]) == 0


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg, force=False):
        raise NumericalError("solver stalled", residual=1e-3)

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["classify1d", "--config", write(tmp_path, CLASSIFY)]) == 4


def test_one_dimensional_experiment_rejects_2d_law(tmp_path):
    text = "experiment = kks\nlaw = dirichlet\ndim = 2\nalpha = 1, 1, 1, 1\n"
    assert cli.main(["kks", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_balanced_clt_needs_balanced_law(tmp_path):
    text = ("experiment = balanced-clt\nlaw = dirichlet\ndim = 2\nalpha = 1, 1, 1, 1\n"
            "n = 100\nreplicas = 20\ntorus_N = 3\n")
    assert cli.main(["balanced-clt", "--config", write(tmp_path, text),
                     "--out", str(tmp_path)]) == 2


# serialization


def test_to_jsonable_handles_numpy_and_non_finite():
    out = cli.to_jsonable({"a": np.float64(math.inf), "b": np.arange(3), "c": (np.True_, None),
                           "d": float("nan")})
    assert out == {"a": "inf", "b": [0, 1, 2], "c": [True, None], "d": "nan"}
    json.dumps(out, allow_nan=False)


def test_csv_cells():
    assert cli._cell(0.1) == "0.1"
    assert cli._cell(-math.inf) == "-inf"
    assert cli._cell([1, 2.5]) == "1 2.5"
    assert cli._cell(True) == "true"
    assert cli._cell(None) == ""
