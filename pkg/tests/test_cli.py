import json

import pytest
import yaml

from stirlab.cli import main
from stirlab.process import EventLog

SMALL = {
    "seed": 4,
    "simulate": {"N": 32, "T": 0.02, "replicas": 2, "epsilon": 0.1,
                 "potentials": {"fourier": [[[1, 0.0, 0.5]], [[1, 0.5, 0.0]]], "Mu": 128}},
    "hydro": {"M": 32, "T": 0.01, "K": 2},
    "rate": {"M": 32, "T": 0.02, "K": 32, "basis": [2, 2], "reference": {"constant": [0.3, 0.3], "M": 32}},
    "girsanov": {"N": 12, "T": 0.05, "replicas": 3},
    "blocks": {"k": [1, 2], "N": [10, 20]},
    "sweep": {"kind": "equivalence", "N": [10, 20, 40]},
}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return p


@pytest.mark.parametrize("command", ["simulate", "hydro", "rate", "girsanov", "blocks", "sweep"])
def test_commands_write_manifest(command, cfg, tmp_path):
    out = tmp_path / command
    assert main([command, "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == command and man["seed"] == 4
    for name in man["artifacts"]:
        assert (out / name).exists()


def test_outputs_are_byte_identical(cfg, tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "9"]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "manifest.json":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    assert ma == mb


def test_seed_changes_events(cfg, tmp_path):
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    a = EventLog.read(tmp_path / "a" / "events_000.stir")
    b = EventLog.read(tmp_path / "b" / "events_000.stir")
    assert a.seed == 1 and b.seed == 2
    assert len(a) != len(b) or (a.t != b.t).any()


def test_json_format(cfg, tmp_path):
    assert main(["blocks", "--config", str(cfg), "--out", str(tmp_path), "--format", "json"]) == 0
    rows = json.loads((tmp_path / "block_gaps.json").read_text())
    assert [r["k"] for r in rows] == [1, 2]


def test_threads_give_same_results(cfg, tmp_path, monkeypatch):
    main(["girsanov", "--config", str(cfg), "--out", str(tmp_path / "one"), "--threads", "1"])
    monkeypatch.setenv("STIRLAB_THREADS", "2")
    main(["girsanov", "--config", str(cfg), "--out", str(tmp_path / "two")])
    assert (tmp_path / "one" / "weights.csv").read_bytes() == (tmp_path / "two" / "weights.csv").read_bytes()


def test_bad_config_gives_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("simulate: {N: -3}\n")
    code = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code != 0
    rec = json.loads((tmp_path / "o" / "error.json").read_text())
    assert rec["error"] == "ConfigError"
    assert json.loads(capsys.readouterr().err.strip())["command"] == "simulate"


def test_simplex_violation_reported(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("hydro: {M: 16, profile: {constant: [0.8, 0.5]}}\n")
    assert main(["hydro", "--config", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert json.loads((tmp_path / "o" / "error.json").read_text())["error"] == "SimplexError"


@pytest.mark.parametrize("target", ["einstein", "equivalence"])
def test_verify_targets(target, tmp_path):
    assert main(["verify", target, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["passed"] is True
