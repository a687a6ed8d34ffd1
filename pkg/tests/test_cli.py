"""Tests for the ``lpvbench`` command line."""
from __future__ import annotations

import json

import pytest

from incremental_lpv.errors import InfeasibleError
from lpvbench import cli


def _inline_experiment(tmp_path, horizon: int = 60) -> str:
    data = {
        "name": "cli-inline",
        "plant": {
            "kind": "inline",
            "inline": {"A": [[[0.5, 0.1], [0.0, 0.7]]], "B": [[0.0], [1.0]], "C": [[1.0, 0.0]]},
        },
        "polytope": {"vertices": [[0.0]]},
        "comparator": {"enabled": False},
        "scenarios": [{"name": "r1", "reference": {"kind": "constant", "level": 1.0}, "horizon": horizon}],
        "probe": {"trials": 2, "horizon": horizon},
        "output_dir": "out",
        "log_dir": "logs",
    }
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])


def test_parser_options():
    args = cli.build_parser().parse_args(
        ["simulate", "--config", "exp.json", "--seed", "3", "--quadrature-order", "32", "--eps-pole", "0.01"]
    )
    assert args.command == "simulate"
    assert args.config == "exp.json"
    assert (args.seed, args.quadrature_order, args.eps_pole) == (3, 32, 0.01)
    assert not args.verbose


def test_overrides_applied(tmp_path):
    config = _inline_experiment(tmp_path)
    args = cli.build_parser().parse_args(["synth", "--config", config, "--seed", "5", "--eps-pole", "0.001"])
    cfg, base = cli._resolve_config(args)
    assert cfg.seed == 5
    assert cfg.weights.epsilon == 0.001
    assert base == tmp_path.resolve()


@pytest.mark.parametrize("flag", [["--eps-pole", "1.5"], ["--quadrature-order", "0"]])
def test_invalid_overrides_rejected(tmp_path, flag):
    with pytest.raises(SystemExit):
        cli.main(["synth", "--config", _inline_experiment(tmp_path), *flag])


def test_missing_config_is_a_config_error(tmp_path):
    with pytest.raises(SystemExit, match="not found"):
        cli.main(["synth", "--config", str(tmp_path / "absent.json")])


def test_missing_controller_is_a_config_error(tmp_path):
    with pytest.raises(SystemExit, match="Controller file not found"):
        cli.main(["analyze", "--config", _inline_experiment(tmp_path)])


def test_infeasible_synthesis_exit_code(tmp_path, monkeypatch, capsys):
    def infeasible(cfg, out_dir):
        raise InfeasibleError("no certificate", {"gamma": None})

    monkeypatch.setitem(cli.COMMANDS, "synth", infeasible)
    assert cli.main(["synth", "--config", _inline_experiment(tmp_path)]) == cli.EXIT_INFEASIBLE
    assert "no certificate" in capsys.readouterr().out


def test_synth_simulate_analyze(tmp_path, capsys):
    config = _inline_experiment(tmp_path)
    out = tmp_path / "out"

    assert cli.main(["synth", "--config", config]) == cli.EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"incremental"}
    assert summary["incremental"]["gamma"] > 0
    for name in ("controller_incremental.json", "certificate_incremental.json", "certificate_incremental.txt"):
        assert (out / name).exists()

    assert cli.main(["simulate", "--config", config]) == cli.EXIT_OK
    flags = json.loads((out / "summary.json").read_text())
    assert not flags["r1"]["incremental"]["diverged"]
    assert (out / "trace_r1_incremental.csv").exists()
    assert (out / "trace_r1_incremental.meta.json").exists()
    capsys.readouterr()

    assert cli.main(["analyze", "--config", config]) == cli.EXIT_OK
    analysis = json.loads((out / "analysis.json").read_text())
    entry = analysis["incremental"]
    assert entry["gain"]["verdict"] == "certified"
    assert entry["gain"]["gamma"] <= summary["incremental"]["gamma"] + 1e-3
    assert entry["probe"]["trials"] == 2
