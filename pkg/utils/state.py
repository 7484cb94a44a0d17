# state.py
from collections.abc import Mapping, MutableMapping
from typing import Any


def deepMerge(base: MutableMapping[str, Any], patch: Mapping[str, Any]) -> MutableMapping[str, Any]:
    """Fold ``patch`` into ``base`` in place and return ``base``.

    Mappings merge key by key at any depth; every other value (numbers,
    lists, pydantic models) replaces what ``base`` held. Mappings taken from
    ``patch`` are copied, so merging a suite's deltaState into a report never
    aliases the suite's own dicts.
    """
    for key, value in patch.items():
        if isinstance(value, Mapping):
            current = base.get(key)
            if not isinstance(current, MutableMapping):
                current = base[key] = {}
            deepMerge(current, value)
        else:
            base[key] = value
    return base


def compact_report(report):
    """Return a compact, JSON-serializable dict with the parts of an
    ExperimentReport worth printing on a terminal.

    Keeps: suite name, replica and survivor counts, every verdict as
    name -> passed, the headline numbers of the summary, and the manifest
    seed/config hash. Safe for missing attributes and for plain dicts.
    """
    try:
        data = report.model_dump() if hasattr(report, "model_dump") else dict(report)
    except Exception:
        return {}

    compact = {"suite": data.get("suite")}
    summary = data.get("summary") or {}
    compact["replicas"] = summary.get("replicas")
    compact["survivors"] = summary.get("survivors")

    verdicts = data.get("verdicts") or {}
    compact["verdicts"] = {}
    for name, verdict in verdicts.items():
        try:
            compact["verdicts"][name] = bool(verdict.get("passed"))
        except Exception:
            compact["verdicts"][name] = None

    headline = {}
    for key in ("empirical_variance", "target_variance", "extinct_fraction",
                "extinction_probability", "ks_statistic", "w_mean", "lln_gap"):
        if key in summary:
            headline[key] = summary[key]
    compact["headline"] = headline

    manifest = data.get("manifest") or {}
    compact["seed"] = manifest.get("seed")
    compact["config_hash"] = manifest.get("config_hash")
    compact["errors"] = data.get("errors", [])
    return compact
