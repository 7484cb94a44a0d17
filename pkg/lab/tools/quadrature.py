"""
Adaptive Gauss-Legendre quadrature over time, and Gauss-Hermite over phi.

The integrands of the moment recursions are smooth exponential-polynomials
in the time variable but take values in a vector space (polynomials in x,
error-carrying layers, plain floats). The integrator therefore only needs
``+``, multiplication by a float, a norm and a coefficientwise absolute value
from the integrand's values.

Each panel is compared with the sum of its two halves; the halves are kept
when they agree within tolerance, otherwise both halves are refined. The
accumulated |difference| is returned alongside the integral so callers can
carry it as an error bound.
"""

import math
from functools import lru_cache
from itertools import product
from typing import Any, Callable, NamedTuple

import numpy as np
from numpy.polynomial import hermite_e, legendre

from utils.errors import QuadratureError
from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_ORDER = 10
DEFAULT_TOL = 1e-8
DEFAULT_REL_TOL = 1e-10
DEFAULT_MAX_DEPTH = 30


class QuadratureResult(NamedTuple):
    value: Any
    abs_error: float
    discrepancy: Any
    panels: int


@lru_cache(maxsize=None)
def _legendre_rule(order: int):
    nodes, weights = legendre.leggauss(order)
    return tuple(nodes), tuple(weights)


def _norm(value) -> float:
    if hasattr(value, "max_abs_coeff"):
        return value.max_abs_coeff()
    return float(np.max(np.abs(value)))


def _absolute(value):
    if hasattr(value, "abs"):
        return value.abs()
    return np.abs(value)


def gauss_legendre(fun: Callable[[float], Any], lo: float, hi: float, order: int = DEFAULT_ORDER):
    """Fixed-order Gauss-Legendre rule on a single panel [lo, hi]."""
    nodes, weights = _legendre_rule(order)
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    total = None
    for x, w in zip(nodes, weights):
        term = fun(mid + half * x) * (w * half)
        total = term if total is None else total + term
    return total


def adaptive_gauss_legendre(
    fun: Callable[[float], Any],
    lo: float,
    hi: float,
    *,
    tol: float = DEFAULT_TOL,
    rel_tol: float = DEFAULT_REL_TOL,
    order: int = DEFAULT_ORDER,
    panels: int = 1,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> QuadratureResult:
    """Integrate ``fun`` over [lo, hi] by panel bisection.

    A panel is accepted when |whole - (left + right)| is at most
    max(tol * width share, rel_tol * |left + right|). ``panels`` sets the
    initial uniform partition. Raises QuadratureError when a panel still fails
    at ``max_depth`` bisections.
    """
    if hi < lo:
        raise ValueError(f"integration bounds reversed: [{lo}, {hi}]")
    if hi == lo:
        zero = fun(lo) * 0.0
        return QuadratureResult(zero, 0.0, _absolute(zero), 0)

    width = hi - lo
    edges = np.linspace(lo, hi, panels + 1)
    stack = [
        (float(a), float(b), gauss_legendre(fun, a, b, order), 0)
        for a, b in zip(edges[-2::-1], edges[:0:-1])
    ]
    total = None
    discrepancy = None
    error = 0.0
    accepted = 0
    while stack:
        a, b, whole, depth = stack.pop()
        m = 0.5 * (a + b)
        left = gauss_legendre(fun, a, m, order)
        right = gauss_legendre(fun, m, b, order)
        refined = left + right
        diff = refined - whole
        err = _norm(diff)
        if not math.isfinite(err):
            raise QuadratureError(f"non-finite integrand on [{a}, {b}]", total, err)
        allowed = max(tol * (b - a) / width, rel_tol * _norm(refined))
        if err <= allowed:
            total = refined if total is None else total + refined
            gap = _absolute(diff)
            discrepancy = gap if discrepancy is None else discrepancy + gap
            error += err
            accepted += 1
            continue
        if depth + 1 >= max_depth:
            raise QuadratureError(
                f"adaptive quadrature on [{lo}, {hi}] failed to converge on panel [{a}, {b}] "
                f"(error {err:.3e} > {allowed:.3e})",
                total,
                error + err,
            )
        # right first so the left half is refined next (deterministic order)
        stack.append((m, b, right, depth + 1))
        stack.append((a, m, left, depth + 1))

    logger.debug(f"quadrature on [{lo:.4g}, {hi:.4g}]: {accepted} panels, error {error:.3e}")
    return QuadratureResult(total, error, discrepancy, accepted)


def gauss_hermite_phi(fun: Callable[[np.ndarray], np.ndarray], variance: float, dim: int, order: int = 20) -> float:
    """E fun(G) for G ~ N(0, variance I_d) by a tensor Gauss-Hermite rule.

    ``fun`` receives an (N, d) array of nodes and returns N values.
    """
    nodes, weights = hermite_e.hermegauss(order)
    weights = weights / math.sqrt(2.0 * math.pi)
    scale = math.sqrt(variance)
    grid = np.array(list(product(nodes, repeat=dim))) * scale
    grid_weights = np.array([np.prod(w) for w in product(weights, repeat=dim)])
    return float(np.dot(grid_weights, fun(grid)))
