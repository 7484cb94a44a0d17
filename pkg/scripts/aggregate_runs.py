"""Aggregate experiment run logs from data/run_log.csv.

Usage:
    python scripts/aggregate_runs.py

Produces a JSON summary `data/run_log_summary.json` with totals by date and by suite.
"""
from collections import defaultdict
import csv
import json
import os
from datetime import datetime

CSV_PATH = os.path.join(os.path.dirname(__file__), '..', 'data', 'run_log.csv')
CSV_PATH = os.path.normpath(CSV_PATH)


def _empty():
    return {'runs': 0, 'passed': 0, 'failed': 0, 'replicas': 0, 'elapsed_ms': 0}


def aggregate(csv_path: str = CSV_PATH) -> dict:
    by_date = defaultdict(_empty)
    by_suite = defaultdict(_empty)
    total = _empty()
    seeds = defaultdict(set)

    with open(csv_path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        for row in reader:
            try:
                ts = row.get('timestamp')
                dt = datetime.fromisoformat(ts) if ts else None
            except Exception:
                dt = None
            date_key = dt.date().isoformat() if dt else 'unknown'
            suite = row.get('suite') or 'unknown'

            try:
                elapsed = int(float(row.get('elapsed_ms') or 0))
            except Exception:
                elapsed = 0
            try:
                replicas = int(float(row.get('replicas') or 0))
            except Exception:
                replicas = 0
            passed = 1 if row.get('verdict') == 'pass' else 0

            for bucket in (by_date[date_key], by_suite[suite], total):
                bucket['runs'] += 1
                bucket['passed'] += passed
                bucket['failed'] += 1 - passed
                bucket['replicas'] += replicas
                bucket['elapsed_ms'] += elapsed
            if row.get('seed'):
                seeds[suite].add(row['seed'])

    for suite, vals in by_suite.items():
        vals['distinct_seeds'] = len(seeds[suite])
    return {'by_date': dict(by_date), 'by_suite': dict(by_suite), 'total': total}


def main() -> int:
    if not os.path.exists(CSV_PATH):
        print(f"No CSV found at {CSV_PATH}")
        return 0
    summary = aggregate(CSV_PATH)

    # Print a short summary
    print("Experiment run summary")
    print("======================")
    print('\nBy date:')
    for d, vals in sorted(summary['by_date'].items()):
        print(f"  {d}: runs={vals['runs']} passed={vals['passed']} failed={vals['failed']} elapsed_ms={vals['elapsed_ms']}")

    print('\nBy suite:')
    for s, vals in sorted(summary['by_suite'].items()):
        print(f"  {s}: runs={vals['runs']} passed={vals['passed']} failed={vals['failed']} "
              f"replicas={vals['replicas']} seeds={vals['distinct_seeds']}")

    total = summary['total']
    print('\nGrand total:')
    print(f"  runs={total['runs']} passed={total['passed']} failed={total['failed']} elapsed_ms={total['elapsed_ms']}")

    # Write JSON summary
    try:
        out_path = os.path.join(os.path.dirname(CSV_PATH), 'run_log_summary.json')
        with open(out_path, 'w', encoding='utf-8') as out:
            json.dump(summary, out, indent=2)
            out.write('\n')
        print(f"\nWrote summary to {out_path}")
    except Exception:
        pass
    return 0


if __name__ == '__main__':
    raise SystemExit(main())
