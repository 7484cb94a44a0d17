import csv
import os
from datetime import datetime, timezone


HEADER = ['timestamp', 'suite', 'seed', 'replicas', 'workers', 'elapsed_ms', 'verdict', 'config_hash']


def _default_csv_path() -> str:
    data_dir = os.path.join(os.path.dirname(__file__), '..', 'data')
    return os.path.normpath(os.path.join(data_dir, 'run_log.csv'))


def log_run(suite: str, seed: int, replicas: int, workers: int, elapsed_ms: int = None,
            verdict: str = None, config_hash: str = None, csv_path: str = None) -> None:
    """Append a row describing a finished experiment run to data/run_log.csv.

    This is a safe, best-effort logger. It will not raise exceptions.
    """
    try:
        csv_path = csv_path or _default_csv_path()
        os.makedirs(os.path.dirname(csv_path), exist_ok=True)

        write_header = not os.path.exists(csv_path)
        # If file exists, check if it has headers by reading first line
        if not write_header:
            try:
                with open(csv_path, 'r', newline='', encoding='utf-8') as f:
                    first_line = f.readline().strip()
                    if not first_line.startswith('timestamp'):
                        write_header = True
            except Exception:
                write_header = True

        row = [
            datetime.now(timezone.utc).isoformat(),
            suite,
            int(seed) if seed is not None else '',
            int(replicas) if replicas is not None else '',
            int(workers) if workers is not None else '',
            int(elapsed_ms) if elapsed_ms is not None else '',
            verdict or '',
            config_hash or '',
        ]

        with open(csv_path, 'a', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            if write_header:
                writer.writerow(HEADER)
            writer.writerow(row)
    except Exception:
        pass
