"""
Tests for the command-line entry point and its exit codes.
"""

import json
import os
import sys
from unittest.mock import MagicMock, patch

import pytest

# Ensure project root is on path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import main
from utils.contracts import ExperimentReport
from utils.errors import PopulationCapExceeded


def last_json(text: str) -> dict:
    """The trailing JSON object of the captured stdout."""
    start = text.rindex("\n{") + 1 if "\n{" in text else text.index("{")
    return json.loads(text[start:])


def test_moments_first_order_at_origin(capsys):
    code = main.cli_main(["moments", "--k", "1", "--x", "0", "--t", "1"])
    assert code == main.EXIT_OK
    record = last_json(capsys.readouterr().out)
    assert record["value"] == 0.0
    assert record["abs_error_estimate"] == 0.0
    assert record["kind"] == "u_super"


def test_moments_backbone_kind(capsys):
    code = main.cli_main(["moments", "--k", "2", "--x", "0", "--t", "0.5", "--kind", "v_backbone", "--beta", "1"])
    assert code == main.EXIT_OK
    record = last_json(capsys.readouterr().out)
    assert record["kind"] == "v_backbone"
    assert record["k"] == 2


def test_moments_rejects_bad_order(capsys):
    assert main.cli_main(["moments", "--k", "7", "--x", "0", "--t", "1"]) == main.EXIT_USAGE
    assert main.cli_main(["moments", "--k", "2", "--x", "zero", "--t", "1"]) == main.EXIT_USAGE


def test_variance_slow(capsys):
    assert main.cli_main(["variance", "--f", "x"]) == main.EXIT_OK
    record = last_json(capsys.readouterr().out)
    assert record["regime"] == "slow"
    assert record["sigma_sq"] == pytest.approx(0.25, rel=1e-6)


def test_variance_in_fast_regime_is_a_usage_error():
    assert main.cli_main(["variance", "--alpha", "3"]) == main.EXIT_USAGE


def test_requested_regime_must_match_parameters():
    assert main.cli_main(["clt", "--regime", "critical", "--alpha", "1.5"]) == main.EXIT_USAGE


@pytest.mark.parametrize("argv", [["clt", "--bogus"], [], ["simulate", "--seed", "abc"], ["frobnicate"]])
def test_bad_command_lines(argv):
    assert main.cli_main(argv) == main.EXIT_USAGE


def test_unknown_config_key(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("colour=blue\n", encoding="utf-8")
    assert main.cli_main(["clt", "--config", str(path)]) == main.EXIT_USAGE


def test_simulate_writes_snapshot(tmp_path, capsys):
    code = main.cli_main(["simulate", "--horizon", "0.5", "--resolution", "10", "--output-dir", str(tmp_path)])
    assert code == main.EXIT_OK
    summary = last_json(capsys.readouterr().out)
    assert summary["path"].endswith("snapshot.csv")
    assert (tmp_path / "simulate" / "snapshot.csv").exists()
    assert (tmp_path / "simulate" / "snapshot.json").exists()


def test_simulate_backbone_writes_event_log(tmp_path, capsys):
    code = main.cli_main(["simulate", "--backbone", "--horizon", "1", "--output-dir", str(tmp_path)])
    assert code == main.EXIT_OK
    summary = last_json(capsys.readouterr().out)
    assert (tmp_path / "simulate" / "backbone_events.tsv").exists()
    assert summary["events"] >= 0


def _coordinator_returning(report):
    coordinator = MagicMock()
    coordinator.run_suite.return_value = report
    return coordinator


def test_suite_exit_codes(capsys):
    passing = ExperimentReport(suite="bridge", verdicts={"variance_bridge": {"passed": True}})
    failing = ExperimentReport(suite="bridge", verdicts={"variance_bridge": {"passed": False}})
    erroring = ExperimentReport(suite="bridge", verdicts={}, errors=["something went wrong"])
    with patch("main.get_coordinator", return_value=_coordinator_returning(passing)):
        assert main.cli_main(["bridge", "--quick"]) == main.EXIT_OK
    assert "PASS" in capsys.readouterr().out
    with patch("main.get_coordinator", return_value=_coordinator_returning(failing)):
        assert main.cli_main(["bridge", "--quick"]) == main.EXIT_FAILED
    assert "FAIL" in capsys.readouterr().out
    with patch("main.get_coordinator", return_value=_coordinator_returning(erroring)):
        assert main.cli_main(["bridge"]) == main.EXIT_FAILED


def test_suite_receives_flag_overrides():
    coordinator = _coordinator_returning(ExperimentReport(suite="clt"))
    with patch("main.get_coordinator", return_value=coordinator):
        main.cli_main(["clt", "--quick", "--seed", "7", "--replicas", "200", "--nu", "0.5@0;0.5@1"])
    name, cfg = coordinator.run_suite.call_args[0]
    assert name == "clt"
    assert cfg.seed == 7
    assert cfg.replicas == 200
    assert cfg.quick
    assert len(cfg.nu) == 2


def test_aborted_run_exits_with_failure():
    coordinator = MagicMock()
    coordinator.run_suite.side_effect = PopulationCapExceeded("cap", {})
    with patch("main.get_coordinator", return_value=coordinator):
        assert main.cli_main(["mass-law", "--quick"]) == main.EXIT_FAILED
