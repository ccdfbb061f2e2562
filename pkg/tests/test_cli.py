import json

import pytest

from confcover.cli import ENV_OUTPUT, build_parser, resolve, run
from confcover.io import read_csv


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args(["--version"])
    assert e.value.code == 0


def test_usage_errors(tmp_path, capsys):
    assert run([]) == 1
    assert run(["bogus"]) == 1
    assert run(["eigen", "--output-dir", str(tmp_path)]) == 1
    assert "--N is required" in capsys.readouterr().err
    assert run(["eigen", "--N", "6", "--threads", "0", "--output-dir", str(tmp_path)]) == 1
    assert run(["eigen", "--N", "6", "--shape", "blob:1", "--output-dir", str(tmp_path)]) == 1
    assert run(["capacity", "--N", "6", "--set", "1,2", "--output-dir", str(tmp_path)]) == 1


def test_numerical_failure_exit_code(tmp_path):
    argv = ["capacity", "--N", "6", "--method", "monte_carlo", "--samples", "3", "--output-dir", str(tmp_path)]
    assert run(argv) == 2


def test_precedence(tmp_path, monkeypatch):
    conf = tmp_path / "run.conf"
    conf.write_text("N = 9\nseed = 4\neps = 0.3\n")
    monkeypatch.setenv(ENV_OUTPUT, str(tmp_path / "env"))
    ns = build_parser().parse_args(["eigen", "--config", str(conf), "--seed", "7"])
    rc = resolve(ns)
    assert (rc.N, rc.seed, rc.eps) == (9, 7, 0.3)
    assert rc.output_dir == str(tmp_path / "env")
    ns = build_parser().parse_args(["eigen", "--config", str(conf), "--output-dir", str(tmp_path / "flag")])
    assert resolve(ns).output_dir == str(tmp_path / "flag")
    conf.write_text("N = 9\nbogus = 1\n")
    assert run(["eigen", "--config", str(conf)]) == 1


def test_eigen_and_validate_outputs(tmp_path):
    assert run(["eigen", "--N", "6", "--output-dir", str(tmp_path), "--dump-domain", str(tmp_path / "dom.txt")]) == 0
    rows = read_csv(tmp_path / "eigen.csv")
    assert list(rows[0]) == ["site_index", "x", "y", "z", "phi"]
    summ = json.loads((tmp_path / "eigen.json").read_text())
    assert "threads" not in summ.get("config", {})
    assert (tmp_path / "dom.txt").exists()
    assert run(["validate", "--N", "6", "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["status"] == "ok"


def test_capacity_and_green(tmp_path):
    assert run(["capacity", "--N", "6", "--set", "0,0,0;1,0,0", "--untilted", "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "capacity.json").read_text())
    assert rep["capacity"] > 0
    assert len(read_csv(tmp_path / "capacity.csv")) == 2
    assert run(["green", "--N", "6", "--slice-radius", "2", "--output-dir", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "green.csv")) == 25


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUTPUT, str(tmp_path / "viaenv"))
    assert run(["reference"]) == 0
    assert (tmp_path / "viaenv" / "reference.csv").exists()
