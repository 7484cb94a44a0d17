"""
Tests for the experiment coordinator: determinism across workers, report
persistence, and how survivorless or capped runs are reported.
"""

import json
import os
import sys
from unittest.mock import patch

import pytest

# Ensure project root is on path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lab.coordinator import ExperimentCoordinator, get_coordinator, load_rows, write_rows
from lab.suites import VarianceBridgeSuite
from utils.config import build_config
from utils.contracts import ReplicaRow
from utils.errors import ConfigError, PopulationCapExceeded

NO_ENV = {}


@pytest.fixture(autouse=True)
def no_run_log():
    with patch("lab.coordinator.log_run") as mocked:
        yield mocked


def small_cfg(tmp_path, **overrides):
    values = dict(replicas=100, resolution=10, laplace_time=0.5, horizon=1.0, alpha=1.0, beta=1.0,
                  v_draws=500, output_dir=str(tmp_path))
    values.update(overrides)
    return build_config(overrides=values, environ=NO_ENV)


def test_rows_do_not_depend_on_worker_count(tmp_path):
    coordinator = ExperimentCoordinator()
    serial = coordinator.run_suite("bridge", small_cfg(tmp_path, workers=1), persist=False)
    parallel = coordinator.run_suite("bridge", small_cfg(tmp_path, workers=2), persist=False)
    assert [row.replica_id for row in serial.rows] == list(range(100))
    assert [r.model_dump() for r in serial.rows] == [r.model_dump() for r in parallel.rows]
    assert serial.summary == parallel.summary


def test_persisted_report_is_recomputable(tmp_path, no_run_log):
    cfg = small_cfg(tmp_path)
    report = ExperimentCoordinator().run_suite("bridge", cfg)
    run_dir = tmp_path / "bridge"
    saved = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))

    assert "rows" not in saved
    assert manifest["seed"] == cfg.seed
    assert manifest["config_hash"] == cfg.config_hash()
    assert saved["verdicts"].keys() == report.verdicts.keys()

    rows = load_rows(str(run_dir / "rows.csv"))
    assert rows == report.rows
    assert VarianceBridgeSuite().summarize(cfg, rows).summary == report.summary

    no_run_log.assert_called_once()
    args, kwargs = no_run_log.call_args
    assert args[0] == "bridge"
    assert kwargs["verdict"] in ("pass", "fail")
    assert kwargs["config_hash"] == cfg.config_hash()


def test_rows_csv_layout(tmp_path):
    rows = [
        ReplicaRow(replica_id=0, survived=True, mass=0.1, v_t=1 / 3, values={"b": 2.0, "a": -0.5}),
        ReplicaRow(replica_id=1, survived=False, mass=0.0, v_t=0.0, values={"a": 1e-300}),
    ]
    path = tmp_path / "rows.csv"
    write_rows(rows, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "replica_id,survived,mass,v_t,a,b"
    assert lines[2] == "1,0,0.0,0.0,1e-300,"
    assert load_rows(str(path)) == rows


def test_run_without_survivors_is_reported(tmp_path):
    cfg = small_cfg(tmp_path, nu="")
    report = ExperimentCoordinator().run_suite("clt", cfg, persist=False)
    assert not report.passed
    assert report.verdicts["survivors"]["passed"] is False
    assert report.errors and "surviving replicas" in report.errors[0]
    assert all(not row.survived for row in report.rows)


def test_population_cap_aborts_run(tmp_path):
    coordinator = ExperimentCoordinator()
    cfg = small_cfg(tmp_path, population_cap=3)
    with pytest.raises(PopulationCapExceeded):
        coordinator.run_suite("mass-law", cfg)
    report = coordinator.get_last_report()
    assert report.summary["aborted"] is True
    assert report.verdicts["population_cap"] == {"passed": False, "cap": 3}
    assert "observed_times" in report.summary["partial_state"]
    assert (tmp_path / "mass-law" / "report.json").exists()


def test_unrunnable_configuration_is_a_config_error(tmp_path):
    cfg = small_cfg(tmp_path, resolution=1, alpha=1.0, beta=0.5)
    with pytest.raises(ConfigError):
        ExperimentCoordinator().run_suite("clt", cfg, persist=False)
    with pytest.raises(ConfigError):
        ExperimentCoordinator().run_suite("no-such-suite", cfg, persist=False)


def test_validation_runs_nested_suites_without_persisting(tmp_path):
    coordinator = ExperimentCoordinator()
    suite = coordinator.build_suite("validation")
    cfg = small_cfg(tmp_path)
    with patch.object(coordinator, "run_suite") as nested:
        nested.return_value.verdicts = {"ok": {"passed": True}}
        suite.runner("bridge", cfg)
    nested.assert_called_once_with("bridge", cfg, persist=False)


def test_global_coordinator_is_shared():
    assert get_coordinator() is get_coordinator()
