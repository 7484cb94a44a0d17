"""
Experiment coordinator for the superprocess lab.

Runs a suite in two phases:
- Fan-out: replica ids are split into contiguous batches and simulated by
  worker processes (or inline with one worker); each replica owns its random
  stream, so rows do not depend on the batching.
- Aggregation: rows are sorted by replica_id and handed to the suite, whose
  deltaState patch is deep-merged into the ExperimentReport.

Reports are persisted as report.json, rows.csv and manifest.json under
<output_dir>/<suite>/ and every finished run is appended to data/run_log.csv.
"""

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from lab.suites import SUITE_REGISTRY, BaseSuite, ValidationSuite, resolve_suite_name
from lab.tools.streams import split_batches
from utils.contracts import ExperimentConfig, ExperimentReport, ReplicaRow, RunManifest
from utils.errors import ConfigError, NoSurvivorsError, PopulationCapExceeded
from utils.logger import get_logger
from utils.run_logger import log_run
from utils.state import deepMerge

# Load environment variables from project root .env if present
dotenv_path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), ".env")
load_dotenv(dotenv_path=dotenv_path)

logger = get_logger(__name__)

ROW_FIELDS = ["replica_id", "survived", "mass", "v_t"]


def _run_batch(suite_name: str, cfg: ExperimentConfig, replica_ids: List[int]) -> List[ReplicaRow]:
    """Worker entry point: simulate a batch of replicas of one suite."""
    replica = SUITE_REGISTRY[suite_name].replica
    rows = []
    for replica_id in replica_ids:
        try:
            rows.append(replica(cfg, replica_id))
        except PopulationCapExceeded as e:
            raise PopulationCapExceeded(f"replica {replica_id}: {e}", _partial_summary(e.partial_state)) from None
    return rows


def _partial_summary(state: Any) -> Dict[str, Any]:
    """Small picklable description of the state a capped simulation reached."""
    if state is None:
        return {}
    snapshots = getattr(state, "snapshots", {}) or {}
    return {
        "observed_times": sorted(float(t) for t in snapshots),
        "population": {f"{t:g}": int(len(p)) for t, p in sorted(snapshots.items())},
        "current_time": getattr(state, "current_time", None),
    }


class ExperimentCoordinator:
    """Runs suites, aggregates replica rows and persists reports."""

    def __init__(self):
        self.last_report: Optional[ExperimentReport] = None

    def build_suite(self, name: str) -> BaseSuite:
        name = resolve_suite_name(name)
        if name == "validate":
            return ValidationSuite(runner=lambda sub, cfg: self.run_suite(sub, cfg, persist=False))
        return SUITE_REGISTRY[name]()

    def fan_out(self, suite_name: str, cfg: ExperimentConfig) -> List[ReplicaRow]:
        """Simulate all replicas; the result is sorted by replica_id whatever the worker count."""
        batches = split_batches(range(cfg.replicas), cfg.workers)
        logger.info(f"{suite_name}: {cfg.replicas} replicas in {len(batches)} batch(es)")
        if cfg.workers <= 1 or len(batches) <= 1:
            rows = [row for batch in batches for row in _run_batch(suite_name, cfg, batch)]
        else:
            with ProcessPoolExecutor(max_workers=len(batches)) as pool:
                futures = [pool.submit(_run_batch, suite_name, cfg, batch) for batch in batches]
                rows = [row for future in futures for row in future.result()]
        rows.sort(key=lambda row: row.replica_id)
        return rows

    def run_suite(self, name: str, cfg: ExperimentConfig, persist: bool = True) -> ExperimentReport:
        """Run one suite end to end and return its report."""
        name = resolve_suite_name(name)
        suite = self.build_suite(name)
        if not suite.can_handle(cfg):
            raise ConfigError(f"suite '{name}' cannot run with this configuration")

        started_at = datetime.now(timezone.utc).isoformat()
        start = time.perf_counter()
        report = ExperimentReport(suite=name)
        logger.info(f"Running suite '{name}' (seed {cfg.seed}, config {cfg.config_hash()})")

        try:
            rows = self.fan_out(name, cfg) if suite.replica is not None else []
            report.rows = rows
            report = self._apply_delta(report, suite.process(cfg, rows))
        except NoSurvivorsError as e:
            logger.error(f"{name}: {e}")
            report.errors.append(str(e))
            report.verdicts["survivors"] = {"passed": False, "detail": str(e)}
        except PopulationCapExceeded as e:
            logger.error(f"{name}: run aborted: {e}")
            report.errors.append(f"run aborted: {e}")
            report.summary["aborted"] = True
            report.summary["partial_state"] = e.partial_state or {}
            report.verdicts["population_cap"] = {"passed": False, "cap": cfg.population_cap}
            self._finish(report, cfg, started_at, start, persist)
            raise

        self._finish(report, cfg, started_at, start, persist)
        status = "passed" if report.passed else "FAILED"
        logger.info(f"Suite '{name}' {status} ({len(report.verdicts)} verdicts)")
        return report

    def _finish(self, report: ExperimentReport, cfg: ExperimentConfig, started_at: str, start: float,
                persist: bool) -> None:
        runtime = time.perf_counter() - start
        report.manifest = RunManifest(
            seed=cfg.seed,
            config_hash=cfg.config_hash(),
            runtime_s=runtime,
            workers=cfg.workers,
            started_at=started_at,
            config=cfg.describe(),
        )
        if persist:
            self.persist(report, cfg.output_dir)
        log_run(
            report.suite,
            cfg.seed,
            cfg.replicas,
            cfg.workers,
            elapsed_ms=int(runtime * 1000),
            verdict="pass" if report.passed else "fail",
            config_hash=cfg.config_hash(),
        )
        self.last_report = report

    def _apply_delta(self, report: ExperimentReport, delta: Dict[str, Any]) -> ExperimentReport:
        """Apply a suite's deltaState patch to the report."""
        delta_state = delta.get("deltaState", delta)
        merged = report.model_dump()
        deepMerge(merged, delta_state)
        return ExperimentReport(**merged)

    def persist(self, report: ExperimentReport, output_dir: str) -> str:
        """Write report.json, rows.csv and manifest.json; returns the run directory."""
        run_dir = os.path.join(output_dir, report.suite)
        os.makedirs(run_dir, exist_ok=True)
        payload = report.model_dump(mode="json", exclude={"rows"})
        with open(os.path.join(run_dir, "report.json"), "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload.get("manifest") or {}, f, indent=2)
            f.write("\n")
        write_rows(report.rows, os.path.join(run_dir, "rows.csv"))
        logger.info(f"Report written to {run_dir}")
        return run_dir

    def get_last_report(self) -> Optional[ExperimentReport]:
        return self.last_report


def _value_columns(rows: List[ReplicaRow]) -> List[str]:
    columns = set()
    for row in rows:
        columns.update(row.values)
    return sorted(columns)


def write_rows(rows: List[ReplicaRow], path: str) -> None:
    """CSV with replica_id,survived,mass,v_t then the suite's value columns in name order.

    Floats are written with repr so that reading them back is exact.
    """
    columns = _value_columns(rows)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROW_FIELDS + columns)
        for row in rows:
            writer.writerow(
                [row.replica_id, int(row.survived), repr(float(row.mass)), repr(float(row.v_t))]
                + [repr(float(row.values[c])) if c in row.values else "" for c in columns]
            )


def load_rows(path: str) -> List[ReplicaRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for record in csv.DictReader(f):
            rows.append(ReplicaRow(
                replica_id=int(record.pop("replica_id")),
                survived=record.pop("survived") == "1",
                mass=float(record.pop("mass")),
                v_t=float(record.pop("v_t")),
                values={k: float(v) for k, v in record.items() if v != ""},
            ))
    return rows


# Global coordinator instance
_coordinator: Optional[ExperimentCoordinator] = None


def get_coordinator() -> ExperimentCoordinator:
    """Get or create the global experiment coordinator."""
    global _coordinator
    if _coordinator is None:
        _coordinator = ExperimentCoordinator()
    return _coordinator


def run_regime_experiment(cfg: ExperimentConfig, persist: bool = True) -> ExperimentReport:
    return get_coordinator().run_suite("clt", cfg, persist)


def run_mass_law_suite(cfg: ExperimentConfig, persist: bool = True) -> ExperimentReport:
    return get_coordinator().run_suite("mass-law", cfg, persist)


def run_backbone_suite(cfg: ExperimentConfig, persist: bool = True) -> ExperimentReport:
    return get_coordinator().run_suite("backbone", cfg, persist)


def run_variance_bridge(cfg: ExperimentConfig, persist: bool = True) -> ExperimentReport:
    return get_coordinator().run_suite("bridge", cfg, persist)


def run_validation(cfg: ExperimentConfig, persist: bool = True) -> ExperimentReport:
    return get_coordinator().run_suite("validate", cfg, persist)
