import csv
import json

import pytest

from isacsim.cli import build_parser, main, parse_grid


def test_parse_grid():
    assert parse_grid("0:1:0.1") == [round(0.1 * j, 10) for j in range(11)]
    assert parse_grid("0.1,0.9") == [0.1, 0.9]
    assert parse_grid("-10:20:10") == [-10.0, 0.0, 10.0, 20.0]


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["plot"])


def test_tradeoff_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"M": 3, "sca": {"restarts": 1}}))
    rc = main(["tradeoff", "--config", str(cfg), "--out", str(tmp_path), "--trials", "1",
               "--weights", "0.5", "--modes", "half", "--band", "narrow,wide"])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "tradeoff.csv")))
    assert [r["band"] for r in rows] == ["narrow", "wide"]


def test_converge_and_power_commands(tmp_path):
    common = ["--out", str(tmp_path), "--trials", "1", "--restarts", "1", "--modes", "half",
              "--weights", "0.5"]
    assert main(["converge", "--mode", "half", *common]) == 0
    assert main(["power", "--band", "narrow", *common]) == 0
    assert (tmp_path / "converge.csv").exists() and (tmp_path / "power.csv").exists()


def test_config_with_unknown_key_fails(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"antennas": 4}))
    with pytest.raises(ValueError):
        main(["tradeoff", "--config", str(cfg), "--out", str(tmp_path)])


def test_validate_exit_code(tmp_path, capsys, monkeypatch):
    import isacsim.cli as cli
    from isacsim.experiments import Check
    monkeypatch.setattr(cli, "validate", lambda cfg, quick: [Check("x", False, 1.0, 0.1)])
    assert main(["validate", "--out", str(tmp_path)]) == 1
    assert "FAIL" in capsys.readouterr().out
    monkeypatch.setattr(cli, "validate", lambda cfg, quick: [Check("x", True, 0.0, 0.1)])
    assert main(["validate", "--out", str(tmp_path)]) == 0
