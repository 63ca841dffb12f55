import json

import pytest

from core.cli import config_hash, load_run_config, parse_args, run
from core.errors import ConfigError
from core.writers import read_body


def _write_config(tmp_path, name, document):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


CHAIN = {"builder": "chain", "params": {"N": 2, "E": 1.0, "gamma0": 0.3, "gamma1": 0.7}}


def test_load_run_config_reports_offending_key(tmp_path):
    path = _write_config(tmp_path, "bad.json", {"command": "spectrum", "model": {"builder": "chain", "params": {"N": 2, "gamma0": -1.0, "gamma1": 0.7}}})
    with pytest.raises(ConfigError, match="gamma0"):
        load_run_config(path)
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.json"))
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "broken.json"))


def test_config_hash_is_canonical(tmp_path):
    path = _write_config(tmp_path, "run.json", {"command": "spectrum", "model": CHAIN})
    a = load_run_config(path)
    b = load_run_config(path)
    assert config_hash(a) == config_hash(b)
    assert config_hash(load_run_config(path, {"seed": 4})) != config_hash(a)


def test_oracle_check_command(tmp_path):
    output = tmp_path / "oracle.csv"
    path = _write_config(tmp_path, "oracle.json", {"command": "oracle-check", "model": CHAIN, "output": str(output)})
    assert run(["--config", path, "--no-cache", "--quiet"]) == 0
    rows = read_body(str(output))
    assert len(rows) == 16
    assert all(float(r["eigenvalue_error"]) < 1e-7 for r in rows)
    summary = json.loads(output.with_suffix(".summary.json").read_text())
    assert summary["command"] == "oracle-check"
    assert summary["results"]["oracle_check"]["mismatches"] == 0


def test_spectrum_command_writes_header(tmp_path):
    output = tmp_path / "spectrum.csv"
    path = _write_config(tmp_path, "spectrum.json", {"command": "spectrum", "model": CHAIN, "output": str(output)})
    assert run(["--config", path, "--no-cache", "--quiet"]) == 0
    header = [line for line in output.read_text().splitlines() if line.startswith("#")]
    assert header[0] == "# command: spectrum"
    assert any(line.startswith("# config_hash: ") for line in header)
    assert len(read_body(str(output))) == 16


def test_typicality_output_is_thread_independent(tmp_path):
    document = {
        "command": "typicality",
        "model": CHAIN,
        "ensemble": [{"kind": "TwoDesign"}, {"kind": "Induced", "env_dim": 2}],
        "modes": [2, 4, 7],
        "n_samples": 1200,
        "seed": 17
    }
    bodies = []
    for threads in (1, 4):
        output = tmp_path / f"typ{threads}.csv"
        path = _write_config(tmp_path, "typ.json", {**document, "output": str(output)})
        assert run(["--config", path, "--threads", str(threads), "--no-cache", "--quiet"]) == 0
        bodies.append(read_body(str(output)))
    assert bodies[0] == bodies[1]
    assert len(bodies[0]) == 6


def test_mixing_time_command(tmp_path):
    output = tmp_path / "mix.csv"
    path = _write_config(tmp_path, "mix.json", {
        "command": "mixing-time",
        "model": CHAIN,
        "ensemble": {"kind": "HilbertSchmidt"},
        "modes": [2],
        "n_samples": 100,
        "seed": 2,
        "eps": 0.05,
        "output": str(output)
    })
    assert run(["--config", path, "--no-cache", "--quiet"]) == 0
    (row,) = read_body(str(output))
    assert float(row["t_typical"]) <= float(row["t_worst"])


def test_bound_check_command(tmp_path):
    output = tmp_path / "bounds.csv"
    path = _write_config(tmp_path, "bounds.json", {
        "command": "bound-check",
        "model": {"builder": "davies", "params": {"N": 1, "beta": 1.0, "instances": 3}},
        "seed": 5,
        "output": str(output)
    })
    assert run(["--config", path, "--no-cache", "--quiet"]) == 0
    rows = read_body(str(output))
    assert len(rows) == 3
    assert all(float(r["max_Ok"]) <= float(r["bound"]) * (1 + 1e-8) for r in rows)


@pytest.mark.slow
def test_sweep_command(tmp_path):
    output = tmp_path / "sweep.csv"
    path = _write_config(tmp_path, "sweep.json", {
        "command": "sweep",
        "model": {"builder": "tfim", "params": {"N": 2, "beta": 1.0}},
        "ensemble": [{"kind": "TwoDesign"}, {"kind": "HilbertSchmidt"}],
        "n_samples": 500,
        "seed": 21,
        "sweep": {"n_min": 1, "n_max": 3, "betas": [0.5, 2.0]},
        "output": str(output)
    })
    assert run(["--config", path, "--no-cache", "--quiet"]) == 2
    path = _write_config(tmp_path, "sweep.json", {
        "command": "sweep",
        "model": {"builder": "tfim", "params": {"N": 2, "beta": 1.0}},
        "ensemble": [{"kind": "TwoDesign"}, {"kind": "HilbertSchmidt"}],
        "n_samples": 500,
        "seed": 21,
        "sweep": {"n_min": 2, "n_max": 4, "betas": [0.5, 2.0]},
        "output": str(output)
    })
    assert run(["--config", path, "--no-cache", "--quiet"]) == 0
    rows = read_body(str(output))
    assert len(rows) == 2 * 3 * 2
    summary = json.loads(output.with_suffix(".summary.json").read_text())
    fits = summary["results"]["sweep[beta=0.5,mode=2]"]["fits"]
    assert fits["TwoDesign"]["exponent"] < 0
    assert "HilbertSchmidt[mc]" in fits
    mixing = summary["results"]["sweep[beta=0.5,mode=2]"]["typical_mixing_time"]
    assert set(mixing) == {"2", "3", "4"}
    for point in mixing.values():
        assert point["ensemble"] == "TwoDesign"
        assert 0.0 < point["t_typical"] <= point["t_worst"]
        assert point["acceptance_fraction"] >= 8 / 9


def test_exit_codes(tmp_path):
    path = _write_config(tmp_path, "bad.json", {"command": "spectrum", "model": CHAIN, "modes": "fastest"})
    assert run(["--config", path, "--no-cache", "--quiet"]) == 2
    path = _write_config(tmp_path, "range.json", {
        "command": "typicality",
        "model": CHAIN,
        "ensemble": {"kind": "HilbertSchmidt"},
        "modes": [17],
        "n_samples": 100,
        "seed": 1,
        "output": str(tmp_path / "range.csv")
    })
    assert run(["--config", path, "--no-cache", "--quiet"]) == 2


def test_command_line_flags_are_validated(tmp_path, capsys):
    path = _write_config(tmp_path, "run.json", {"command": "spectrum", "model": CHAIN})
    args = parse_args(["--config", path, "--threads", "2", "--no-cache"])
    assert args.threads == 2 and args.no_cache and not args.quiet
    with pytest.raises(ConfigError, match="threads"):
        parse_args(["--config", path, "--threads", "0"])
    assert run(["--config", path, "--threads", "-1", "--no-cache", "--quiet"]) == 2
    assert '"code":2' in capsys.readouterr().err
    assert run(["--config", path, "--seed", "-3", "--no-cache", "--quiet"]) == 2
