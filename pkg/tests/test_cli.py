import json
import logging
import math

import pytest

from sheatlab import __version__
from sheatlab.cli import (
    DEFAULT_SEED,
    EXIT_CONFIG,
    EXIT_NONFINITE,
    EXIT_OK,
    main,
    parse_config,
    run_experiment,
)
from sheatlab.errors import ConfigError


def body(path):
    return "".join(ln for ln in path.read_text().splitlines(True) if not ln.startswith("#"))


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_for_tails(monkeypatch):
    monkeypatch.delenv("SHEATLAB_SEED", raising=False)
    cfg = parse_config("tails")
    assert cfg.master_seed == DEFAULT_SEED
    assert cfg.lambdas == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert cfg.sigma.kind == "bounded"
    assert cfg.grid.kappa == 1.0 and cfg.grid.cfl <= 1.0
    assert cfg.resolved["version"] == __version__


def test_flag_beats_file_and_is_logged(tmp_path, caplog):
    p = write(tmp_path, "replicates: 50\ngrid:\n  dx: 0.1\n")
    with caplog.at_level(logging.INFO, logger="sheatlab"):
        cfg = parse_config("tails", p, {"replicates": 70})
    assert cfg.n_replicates == 70
    assert "replicates" in caplog.text and "overrides file value 50" in caplog.text


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SHEATLAB_SEED", "77")
    assert parse_config("tails").master_seed == 77
    p = write(tmp_path, "seed: 5\n")
    assert parse_config("tails", p).master_seed == 5
    assert parse_config("tails", p, {"seed": 9}).master_seed == 9
    monkeypatch.setenv("SHEATLAB_SEED", "abc")
    with pytest.raises(ConfigError):
        parse_config("tails")


def test_cfl_violation_names_rule():
    with pytest.raises(ConfigError) as exc:
        parse_config("tails", flags={"grid.dt": 0.05})
    assert "kappa*dt/dx^2" in str(exc.value)
    assert exc.value.key == "grid.dt"


def test_unknown_key_reports_line(tmp_path):
    p = write(tmp_path, "replicates: 10\ngrid:\n  kappa: 1.0\n  dtt: 0.01\n")
    with pytest.raises(ConfigError) as exc:
        parse_config("tails", p)
    assert exc.value.key == "grid.dtt" and exc.value.line == 4
    p = write(tmp_path, "colour: red\n", "b.yaml")
    with pytest.raises(ConfigError) as exc:
        parse_config("tails", p)
    assert exc.value.key == "colour" and exc.value.line == 1
    with pytest.raises(ConfigError):
        parse_config("tails", flags={"grid.nope": 1})


def test_missing_file_and_empty_lists(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("tails", tmp_path / "absent.yaml")
    with pytest.raises(ConfigError):
        parse_config("tails", flags={"lambdas": []})
    with pytest.raises(ConfigError):
        parse_config("tails", flags={"replicates": 0})


def test_main_exit_code_on_config_error(tmp_path, capsys):
    code = main(["tails", "--out", str(tmp_path), "--set", "grid.dt=0.5"])
    assert code == EXIT_CONFIG
    assert "kappa*dt/dx^2" in capsys.readouterr().err
    assert not list(tmp_path.iterdir())


def test_exit_code_on_solver_blow_up(tmp_path):
    cfg = parse_config("tails", flags={
        "out": str(tmp_path), "replicates": 2, "sigma.kind": "linear", "sigma.c": 1000.0,
        "grid.t_end": 5.0, "grid.half_width": 1.0,
    })
    assert run_experiment(cfg) == EXIT_NONFINITE
    assert not (tmp_path / "tails.csv").exists()


def test_tails_output_shape(tmp_path):
    code = main(["tails", "--out", str(tmp_path), "--replicates", "200"])
    assert code == EXIT_OK
    text = (tmp_path / "tails.csv").read_text()
    assert f"# master_seed={DEFAULT_SEED}" in text and f"# sheatlab {__version__}" in text
    assert "# config=" in text
    rows = body(tmp_path / "tails.csv").splitlines()
    assert rows[0] == "experiment,lambda,estimate,ci_lo,ci_hi,n,seed,config_hash"
    assert len(rows) == 6
    summary = json.loads((tmp_path / "tails.json").read_text())
    assert "tail_fit" in summary["summary"]
    assert summary["master_seed"] == DEFAULT_SEED
    assert not list(tmp_path.glob("*.tmp"))


def test_oracle_final_row(tmp_path):
    assert main(["oracle", "--out", str(tmp_path)]) == EXIT_OK
    rows = body(tmp_path / "oracle.csv").splitlines()
    assert rows[0] == "t,f"
    t, f = map(float, rows[-1].split(","))
    assert t == 1.0
    assert abs(f - math.e * (1 + math.erf(1.0))) < 1e-5


def test_rerun_is_byte_identical(tmp_path):
    args = ["coupling", "--replicates", "4", "--set", "betas=[4, 8, 16, 32]"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert body(tmp_path / "a" / "coupling.csv") == body(tmp_path / "b" / "coupling.csv")


def test_snapshots_written(tmp_path):
    cfg = parse_config("tails", flags={"out": str(tmp_path), "replicates": 200,
                                        "snapshots": [0.5, 1.0]})
    assert run_experiment(cfg) == EXIT_OK
    snap = (tmp_path / "snapshot_t0.5.csv").read_text()
    assert f"# master_seed={DEFAULT_SEED}" in snap and "x,u" in snap
