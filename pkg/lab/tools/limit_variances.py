"""
Limit variances of the central limit theorems and their finite-time certificates.

Slow regime (alpha < 2 mu): with g(r) = <phi, (P_r f~)^2>, P^a_r = e^{a r} P_r and
phi invariant for P, the defining time integral collapses to scalars,

    sigma^2 = (beta/alpha) int_0^inf e^{-alpha s} [ 2 beta (e^{2 alpha s} - e^{-2 alpha s}) g(s)
                                                   + 4 alpha beta int_0^s e^{-alpha(s-r)} e^{-2 alpha r} g(r) dr ] ds

which is integrated up to a horizon where the e^{(alpha - 2 mu) s} tail is
below tolerance. Critical regime (alpha = 2 mu): a closed form in <grad f, phi>.
"""

import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from lab.tools.model_core import ModelParams, Polynomial, Regime, center, grad_inner, integrate_phi
from lab.tools.moment_engine import get_engine
from lab.tools.ou_semigroup import get_semigroup
from lab.tools.quadrature import DEFAULT_TOL, adaptive_gauss_legendre, gauss_hermite_phi
from utils.contracts import FastBoundReport, VarianceMethod, VarianceResult
from utils.errors import QuadratureError, RegimeError
from utils.logger import get_logger

logger = get_logger(__name__)

MIN_HORIZON = 40.0
MAX_HORIZON_DOUBLINGS = 4


def _require(params: ModelParams, regime: Regime, what: str) -> None:
    if params.regime() != regime:
        raise RegimeError(
            f"{what} is defined for the {regime.value} regime, parameters are "
            f"{params.regime().value} (alpha={params.alpha}, mu={params.mu})"
        )


def slow_horizon(params: ModelParams, tol: float = DEFAULT_TOL) -> float:
    """Truncation horizon: the slowest integrand mode decays like e^{(alpha - 2 mu) s}."""
    return max(MIN_HORIZON, 2.0 * math.log(tol) / (params.alpha - 2.0 * params.mu))


def _slow_integrand(f_centered: Polynomial, params: ModelParams, tol: float):
    semigroup = get_semigroup(params)
    alpha, beta = params.alpha, params.beta

    def g(r: float) -> float:
        pushed = semigroup.apply(f_centered, r)
        return integrate_phi(pushed * pushed, params)

    def integrand(s: float) -> float:
        direct = 2.0 * beta * (math.exp(alpha * s) - math.exp(-3.0 * alpha * s)) * g(s)
        if s == 0.0:
            return direct
        inner = adaptive_gauss_legendre(
            lambda r: math.exp(-alpha * (s - r) - 2.0 * alpha * r) * g(r), 0.0, s, tol=tol * 1e-2
        ).value
        return direct + 4.0 * alpha * beta * math.exp(-alpha * s) * inner

    return integrand


def sigma_slow(f: Polynomial, params: ModelParams, tol: float = DEFAULT_TOL) -> VarianceResult:
    """sigma_f^2 of the slow-regime CLT by truncated nested quadrature."""
    _require(params, Regime.SLOW, "sigma_slow")
    f_centered = center(f, params)
    if f_centered.max_abs_coeff() == 0.0:
        return VarianceResult(sigma_sq=0.0, regime=Regime.SLOW, tail_bound=0.0,
                              method=VarianceMethod.QUADRATURE, horizon=0.0)

    integrand = _slow_integrand(f_centered, params, tol)
    decay = 2.0 * params.mu - params.alpha
    horizon = slow_horizon(params, tol)
    for _ in range(MAX_HORIZON_DOUBLINGS + 1):
        # the integrand is eventually a positive multiple of e^{-decay s}, so
        # its value at the horizon divided by the rate bounds the tail
        tail_bound = (params.beta / params.alpha) * abs(integrand(horizon)) / decay
        if tail_bound <= tol:
            break
        horizon *= 2.0
    else:
        raise QuadratureError(
            f"sigma_slow tail bound {tail_bound:.3e} above tolerance {tol:.1e} at horizon {horizon:.1f}",
            None,
            tail_bound,
        )

    panels = max(1, int(math.ceil(horizon / 5.0)))
    result = adaptive_gauss_legendre(integrand, 0.0, horizon, tol=tol, panels=panels)
    sigma_sq = max(0.0, params.beta / params.alpha * result.value)
    logger.debug(f"sigma_slow: {sigma_sq:.10g} (horizon {horizon:.1f}, tail {tail_bound:.2e})")
    return VarianceResult(
        sigma_sq=sigma_sq,
        regime=Regime.SLOW,
        tail_bound=tail_bound + params.beta / params.alpha * result.abs_error,
        method=VarianceMethod.QUADRATURE,
        horizon=horizon,
    )


def sigma_critical(
    f: Polynomial, params: ModelParams, method: VarianceMethod = VarianceMethod.CLOSED_FORM
) -> VarianceResult:
    """2 beta^2 / alpha * int (x . <grad f, phi>)^2 phi(dx).

    ``closed_form`` contracts exact Gaussian moments; ``quadrature`` evaluates
    both the gradient averages and the outer integral by Gauss-Hermite.
    """
    _require(params, Regime.CRITICAL, "sigma_critical")
    method = VarianceMethod(method)
    variance = params.stationary_variance
    scale = 2.0 * params.beta ** 2 / params.alpha
    if method == VarianceMethod.CLOSED_FORM:
        c = grad_inner(f, params)
        value = scale * float(np.sum(c ** 2)) * variance
    else:
        order = max(4, f.degree + 2)
        c = np.array([
            gauss_hermite_phi(f.derivative(j).evaluate, variance, params.dim, order)
            for j in range(params.dim)
        ])
        value = scale * gauss_hermite_phi(lambda x: (x @ c) ** 2, variance, params.dim, order)
    return VarianceResult(sigma_sq=max(0.0, value), regime=Regime.CRITICAL, tail_bound=0.0, method=method)


def normalized_second_moment(f: Polynomial, x, t: float, params: ModelParams) -> float:
    """The finite-time quantity whose limit is the regime's variance.

    Slow: e^{-alpha t} V_f~^2; critical: t^{-1} e^{-alpha t} V_f~^2;
    fast: e^{-2(alpha - mu) t} |V_f~^2|.
    """
    value = get_engine(params).backbone_moment(center(f, params), x, t, 2).value
    regime = params.regime()
    if regime == Regime.SLOW:
        return math.exp(-params.alpha * t) * value
    if regime == Regime.CRITICAL:
        return math.exp(-params.alpha * t) * value / t
    return math.exp(-2.0 * (params.alpha - params.mu) * t) * abs(value)


def fast_regime_bound_check(
    f: Polynomial,
    params: ModelParams,
    x_grid: Sequence,
    t_grid: Sequence[float],
    burn_in: float = 2.0,
) -> FastBoundReport:
    """Tabulate e^{-2(alpha-mu)t}|V_f~^2(x,t)| and judge its boundedness past ``burn_in``.

    ``nonincreasing`` is the literal monotonicity flag; ``stabilizing`` asks
    that the successive increments shrink in magnitude, which is what a
    bounded convergent sequence of this kind shows.
    """
    _require(params, Regime.FAST, "fast_regime_bound_check")
    xs: List[np.ndarray] = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_grid]
    ts = sorted(float(t) for t in t_grid)
    values = [[normalized_second_moment(f, x, t, params) for t in ts] for x in xs]

    late = [j for j, t in enumerate(ts) if t >= burn_in]
    nonincreasing = True
    stabilizing = True
    for row in values:
        tail = [row[j] for j in late]
        steps = np.diff(tail)
        slack = 1e-9 * max(1.0, max((abs(v) for v in tail), default=0.0))
        if np.any(steps > slack):
            nonincreasing = False
        if np.any(np.abs(steps[1:]) > np.abs(steps[:-1]) + slack):
            stabilizing = False

    flat = [v for row in values for v in row]
    finite = bool(np.all(np.isfinite(flat)))
    report = FastBoundReport(
        x_grid=[x.tolist() for x in xs],
        t_grid=ts,
        values=values,
        max_value=float(max(flat)) if flat else 0.0,
        burn_in=burn_in,
        nonincreasing=nonincreasing,
        stabilizing=stabilizing,
        finite=finite,
    )
    logger.info(
        f"fast bound check: max {report.max_value:.4g}, stabilizing={stabilizing}, nonincreasing={nonincreasing}"
    )
    return report


def variance_record(result: VarianceResult) -> Dict[str, object]:
    return {
        "regime": result.regime.value,
        "sigma_sq": result.sigma_sq,
        "tail_bound": result.tail_bound,
        "method": result.method.value,
    }


def limit_variance(f: Polynomial, params: ModelParams, method: Optional[VarianceMethod] = None) -> VarianceResult:
    """Dispatch to the regime's limit variance; the fast regime has none."""
    regime = params.regime()
    if regime == Regime.SLOW:
        return sigma_slow(f, params)
    if regime == Regime.CRITICAL:
        return sigma_critical(f, params, method or VarianceMethod.CLOSED_FORM)
    raise RegimeError("the fast regime has a non-Gaussian limit and no limit variance")
