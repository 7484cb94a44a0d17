"""Utilities package for logging, contracts, errors, configuration and run bookkeeping."""

__all__ = [
    "logger",
    "contracts",
    "errors",
    "state",
    "config",
    "run_logger",
]
