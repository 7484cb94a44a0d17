"""
Statistical checks used by the suites.

Every check returns a plain dict with a ``passed`` flag plus the numbers it
was decided on, ready to be stored as a report verdict. Failing a check is
never an exception.
"""

import math
from itertools import combinations
from typing import Dict, Mapping, Sequence

import numpy as np
from scipy import stats

from utils.errors import NoSurvivorsError


def _as_array(sample) -> np.ndarray:
    return np.asarray(sample, dtype=float).reshape(-1)


def mean_and_se(sample) -> tuple:
    sample = _as_array(sample)
    if len(sample) < 2:
        raise NoSurvivorsError(f"need at least two observations, got {len(sample)}")
    return float(sample.mean()), float(sample.std(ddof=1) / math.sqrt(len(sample)))


def variance_and_se(sample) -> tuple:
    """Sample variance and the delta-method standard error sqrt((m4 - s^4) / N)."""
    sample = _as_array(sample)
    if len(sample) < 2:
        raise NoSurvivorsError(f"need at least two observations, got {len(sample)}")
    centred = sample - sample.mean()
    var = float(centred.var(ddof=1))
    m4 = float(np.mean(centred ** 4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / len(sample))


def mean_check(sample, target: float, n_se: float = 3.0) -> Dict[str, float]:
    mean, se = mean_and_se(sample)
    gap = abs(mean - target)
    return {
        "passed": bool(gap <= n_se * se or gap <= 1e-12 * max(1.0, abs(target))),
        "mean": mean,
        "se": se,
        "target": target,
        "n_se": n_se,
    }


def variance_check(sample, target: float, n_se: float = 4.0) -> Dict[str, float]:
    var, se = variance_and_se(sample)
    return {
        "passed": bool(abs(var - target) <= n_se * se),
        "variance": var,
        "se": se,
        "target": target,
        "n_se": n_se,
    }


def relative_check(value: float, target: float, rel_tol: float) -> Dict[str, float]:
    gap = abs(value - target) / abs(target) if target != 0 else abs(value)
    return {"passed": bool(gap <= rel_tol), "value": value, "target": target, "relative_gap": gap, "rel_tol": rel_tol}


def binomial_check(successes: int, trials: int, p: float, n_se: float = 3.0) -> Dict[str, float]:
    if trials <= 0:
        raise NoSurvivorsError("binomial check needs at least one trial")
    fraction = successes / trials
    se = math.sqrt(p * (1.0 - p) / trials)
    return {
        "passed": bool(abs(fraction - p) <= n_se * se),
        "fraction": fraction,
        "se": se,
        "target": p,
        "n_se": n_se,
    }


def ks_critical_value(n: int, m: int, level: float = 0.01) -> float:
    """Asymptotic two-sample KS threshold c(level) sqrt((n + m) / (n m))."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def ks_two_sample(a, b, level: float = 0.01) -> Dict[str, float]:
    a, b = _as_array(a), _as_array(b)
    if len(a) == 0 or len(b) == 0:
        raise NoSurvivorsError("two-sample KS needs two non-empty samples")
    result = stats.ks_2samp(a, b)
    critical = ks_critical_value(len(a), len(b), level)
    return {
        "passed": bool(result.pvalue >= level),
        "statistic": float(result.statistic),
        "pvalue": float(result.pvalue),
        "critical_value": critical,
        "level": level,
    }


def ks_normal(sample, variance: float, level: float = 0.01) -> Dict[str, float]:
    """KS of ``sample`` against N(0, variance) with the variance given, not fitted."""
    sample = _as_array(sample)
    if len(sample) == 0:
        raise NoSurvivorsError("normality test on an empty sample")
    if variance <= 0:
        return {"passed": bool(np.all(sample == 0.0)), "statistic": 0.0, "pvalue": 1.0, "level": level}
    result = stats.kstest(sample / math.sqrt(variance), "norm")
    return {
        "passed": bool(result.pvalue >= level),
        "statistic": float(result.statistic),
        "pvalue": float(result.pvalue),
        "level": level,
    }


def ks_one_sample(sample, cdf, level: float = 0.01) -> Dict[str, float]:
    result = stats.kstest(_as_array(sample), cdf)
    return {
        "passed": bool(result.pvalue >= level),
        "statistic": float(result.statistic),
        "pvalue": float(result.pvalue),
        "level": level,
    }


def pairwise_correlations(columns: Mapping[str, Sequence[float]], bound_se: float = 4.0) -> Dict[str, object]:
    """Pearson correlations of every column pair; passes when all lie within +-bound_se/sqrt(N)."""
    names = list(columns)
    arrays = {name: _as_array(columns[name]) for name in names}
    size = len(arrays[names[0]]) if names else 0
    if size < 3:
        raise NoSurvivorsError(f"correlations need at least three observations, got {size}")
    bound = bound_se / math.sqrt(size)
    pairs = {}
    for a, b in combinations(names, 2):
        x, y = arrays[a], arrays[b]
        if np.std(x) == 0.0 or np.std(y) == 0.0:
            pairs[f"{a}~{b}"] = 0.0
            continue
        pairs[f"{a}~{b}"] = float(stats.pearsonr(x, y)[0])
    return {
        "passed": bool(all(abs(r) <= bound for r in pairs.values())),
        "correlations": pairs,
        "bound": bound,
    }


def laplace_check(masses, theta: float, target: float, n_se: float = 4.0) -> Dict[str, float]:
    """Empirical E exp(-theta |X_t|) against its analytic value."""
    check = mean_check(np.exp(-theta * _as_array(masses)), target, n_se)
    check["theta"] = theta
    return check
