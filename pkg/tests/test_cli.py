import json
from pathlib import Path

import pytest

from dynbc.cli import main, run_subcommand
from dynbc.config import parse_config
from dynbc.errors import ConfigError
from dynbc.reports import read_json, write_json


def write_cfg(tmp_path: Path, text: str, name: str = "run.cfg") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


MINIMAL = "domain.kind = interval\ntime.T = 1\n"


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, MINIMAL))
    v = cfg.values
    assert v["physics.d"] == 1.0
    assert v["domain.n"] == 32
    assert v["time.n_t"] == 128
    assert v["hum.epsilon"] == 1e-8
    assert v["carleman.lambda"] == 2.0
    assert v["seed"] == 0
    assert v["domain.gamma"] == "right"


def test_disk_requires_angular_resolution(tmp_path):
    p = write_cfg(tmp_path, "domain.kind = disk\ndomain.n_r = 4\n")
    with pytest.raises(ConfigError, match="domain.n_theta"):
        parse_config(p)


def test_negative_horizon_rejected(tmp_path):
    p = write_cfg(tmp_path, "domain.kind = interval\ntime.T = -1\n")
    with pytest.raises(ConfigError, match="time.T"):
        parse_config(p)


def test_unknown_key_lists_valid_keys(tmp_path):
    p = write_cfg(tmp_path, MINIMAL + "carleman.lamda = 3\n")
    with pytest.raises(ConfigError, match="carleman.lambda"):
        parse_config(p)


def test_duplicate_key_rejected(tmp_path):
    p = write_cfg(tmp_path, "domain.kind = interval\ndomain.kind = disk\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(p)


def test_comments_and_blank_lines(tmp_path):
    p = write_cfg(tmp_path, "# a comment\n\ndomain.kind = interval # trailing\n")
    assert parse_config(p).values["domain.kind"] == "interval"


def test_config_hash_ignores_output_dir(tmp_path):
    a = parse_config(write_cfg(tmp_path, MINIMAL + "output.dir = x\n", "a.cfg"))
    b = parse_config(write_cfg(tmp_path, MINIMAL + "output.dir = y\n", "b.cfg"))
    assert a.config_hash() == b.config_hash()
    c = parse_config(write_cfg(tmp_path, MINIMAL + "seed = 9\n", "c.cfg"))
    assert c.config_hash() != a.config_hash()


def test_json_round_trip(tmp_path):
    obj = {"final_norm": 1.25e-7, "iterations": 12, "flag": "", "nested": {"a": [1, 2.5]}}
    p = write_json(tmp_path / "x.json", obj, meta={"config_hash": "abc"})
    back = read_json(p)
    assert back["final_norm"] == obj["final_norm"]
    assert back["nested"] == {"a": [1, 2.5]}
    assert back["_meta"]["config_hash"] == "abc"


def test_mesh_info_end_to_end(tmp_path):
    cfgp = write_cfg(tmp_path, MINIMAL + f"output.dir = {tmp_path/'out'}\n")
    assert main(["mesh-info", "--config", str(cfgp)]) == 0
    info = read_json(tmp_path / "out" / "mesh_info.json")
    assert info["n_nodes"] == 33
    assert info["bulk_weight_sum"] == pytest.approx(1.0, rel=1e-12)
    mesh_csv = (tmp_path / "out" / "mesh.csv").read_text().splitlines()
    header_rows = [l for l in mesh_csv if l.startswith("#")]
    assert any("config_hash" in l for l in header_rows)
    data = [l for l in mesh_csv if not l.startswith("#")]
    assert data[0].startswith("index,")
    assert len(data) == 1 + 33


def test_verify_eta_end_to_end(tmp_path):
    cfgp = write_cfg(tmp_path, "domain.kind = disk\ndomain.n_r = 8\n"
                     "domain.n_theta = 32\nphysics.delta = 0.5\n"
                     f"output.dir = {tmp_path/'out'}\noutput.formats = json\n")
    assert main(["verify-eta", "--config", str(cfgp)]) == 0
    rep = read_json(tmp_path / "out" / "eta_report.json")
    assert rep["passed"] is True
    assert rep["c0"] > 0


def test_empty_sweep_has_header_only(tmp_path):
    cfgp = write_cfg(tmp_path, MINIMAL + "carleman.samples = 0\ntime.n_t = 16\n"
                     f"output.dir = {tmp_path/'out'}\noutput.formats = csv\n")
    assert main(["carleman-sweep", "--config", str(cfgp)]) == 0
    lines = (tmp_path / "out" / "carleman_sweep.csv").read_text().splitlines()
    data = [l for l in lines if not l.startswith("#")]
    assert len(data) == 1
    assert data[0].startswith("s,lambda,T,sample")


def test_missing_config_exit_code_2(capsys):
    assert main(["simulate", "--config", "/nonexistent.cfg"]) == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "ConfigError"


def test_numerical_failure_exit_code_3(tmp_path, capsys):
    # forcing an unreachable flatness tolerance makes certification fail
    cfgp = write_cfg(tmp_path, "domain.kind = disk\ndomain.n_r = 4\n"
                     "domain.n_theta = 16\neta.tol = 1e-300\n"
                     f"output.dir = {tmp_path/'out'}\noutput.formats = json\n")
    code = main(["verify-eta", "--config", str(cfgp)])
    assert code == 3
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "SolverError"


def test_determinism_byte_identical(tmp_path):
    base = MINIMAL + "time.n_t = 32\ndomain.n = 16\noutput.formats = csv,json\n"
    cfgp = write_cfg(tmp_path, base)
    for sub in ("simulate", "hum"):
        assert main([sub, "--config", str(cfgp), "--out", str(tmp_path / "r1")]) == 0
        assert main([sub, "--config", str(cfgp), "--out", str(tmp_path / "r2")]) == 0
    for name in ("trajectory.csv", "simulate.json", "control.csv", "hum.json"):
        b1 = (tmp_path / "r1" / name).read_bytes()
        b2 = (tmp_path / "r2" / name).read_bytes()
        assert b1 == b2, f"{name} differs between identical runs"


def test_seed_changes_artifacts(tmp_path):
    cfgp = write_cfg(tmp_path, MINIMAL + "time.n_t = 32\ndomain.n = 16\n"
                     "output.formats = json\n")
    assert main(["simulate", "--config", str(cfgp), "--out", str(tmp_path / "s0")]) == 0
    assert main(["simulate", "--config", str(cfgp), "--out", str(tmp_path / "s1"),
                 "--seed", "1"]) == 0
    a = read_json(tmp_path / "s0" / "simulate.json")
    b = read_json(tmp_path / "s1" / "simulate.json")
    assert a["final_norm"] != b["final_norm"]


def test_run_subcommand_accepts_parsed_config(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, MINIMAL + "time.n_t = 16\n"
                                 f"output.dir = {tmp_path/'out'}\n"
                                 "output.formats = json\n"))
    assert run_subcommand("simulate", cfg) == 0
    assert (tmp_path / "out" / "simulate.json").exists()
