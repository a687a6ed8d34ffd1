"""Tests for logging configuration resolution."""
from __future__ import annotations

import json
import logging

import pytest

from lpv_utils import setup_logging
from lpvbench import cli


def test_setup_logging_creates_directory(tmp_path):
    log_dir = tmp_path / "nested" / "logs"
    log_file = setup_logging(log_dir, logging.DEBUG)
    logging.getLogger("incremental_lpv.test").debug("hello %s", "file")
    assert log_file.parent == log_dir
    assert log_file.suffix == ".log"
    assert "incremental_lpv.test: hello file" in log_file.read_text()


def test_cli_logging_respects_config(tmp_path, monkeypatch):
    """Logs land in the experiment's ``log_dir``, resolved against the config file."""
    experiment_dir = tmp_path / "experiments"
    experiment_dir.mkdir()
    config = experiment_dir / "experiment.json"
    config.write_text(
        json.dumps(
            {
                "plant": {
                    "kind": "inline",
                    "inline": {"A": [[[0.5]]], "B": [[1.0]], "C": [[1.0]]},
                },
                "polytope": {"vertices": [[0.0]]},
                "comparator": {"enabled": False},
                "output_dir": "../out",
                "log_dir": "../logs",
            }
        )
    )
    workdir = tmp_path / "elsewhere"
    workdir.mkdir()
    monkeypatch.chdir(workdir)

    with pytest.raises(SystemExit):
        cli.main(["analyze", "--config", str(config)])

    log_files = list((tmp_path / "logs").glob("*.log"))
    assert log_files, "Logging did not write to configured directory"
    assert "lpvbench analyze" in log_files[0].read_text()
    assert not list(workdir.glob("*.log")), "Log file written to working directory"
