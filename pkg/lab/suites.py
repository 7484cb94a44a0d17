# ===============================
# Superprocess Lab - Experiment Suites
# ===============================
#
# A suite turns an ExperimentConfig into report content in two steps:
#
#   1. replica(cfg, replica_id) -> ReplicaRow
#      One independent simulation on the replica's own random stream. These are
#      module-level functions so the coordinator can ship them to worker
#      processes; a replica never depends on which worker runs it.
#
#   2. process(cfg, rows) -> {"deltaState": {...}}
#      A pure summary of the rows (plus analytic oracles and run-level
#      reference draws from the seed), returned as a patch that the coordinator
#      deep-merges into the report.
#
# Suites:
#   - RegimeSuite ("clt"): the three fluctuation components of the regime's
#     central limit theorem, their variance/normality/independence verdicts,
#     and for the fast regime the per-trajectory residual decay.
#   - MassLawSuite ("mass-law"): Laplace transform of the total mass,
#     extinction fraction, and the law of the martingale limit.
#   - BackboneSuite ("backbone"): backbone martingales, their link with the
#     mass limit and (fast regime) the spatial representation.
#   - VarianceBridgeSuite ("bridge"): Var<f, X_t> against the second cumulant.
#   - ValidationSuite ("validate"): analytic property checks plus nested runs
#     of the statistical suites at reference parameters.

import math
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from lab.tools.backbone_sim import BackboneEngine, backbone_martingales, poisson_initial, simulate_backbone
from lab.tools.limit_variances import (
    fast_regime_bound_check,
    limit_variance,
    normalized_second_moment,
    sigma_critical,
    sigma_slow,
)
from lab.tools.model_core import AtomicMeasure, ModelParams, Polynomial, Regime, center, grad_inner, integrate_phi
from lab.tools.moment_engine import (
    Mechanism,
    MechanismKind,
    extinction_probability,
    get_engine,
    sample_limit_pair,
    sample_v_infinity,
    total_mass_laplace,
)
from lab.tools.particle_sim import (
    discretized_mass,
    evaluate_functionals,
    simulate_superprocess,
    split_probability,
)
from lab.tools.statistics import (
    binomial_check,
    ks_normal,
    ks_two_sample,
    laplace_check,
    mean_check,
    pairwise_correlations,
    relative_check,
    variance_and_se,
    variance_check,
)
from lab.tools.streams import StreamPurpose, reference_stream, replica_stream
from utils.contracts import ExperimentConfig, ReplicaRow, SuiteOut, SurvivalProxy, VarianceMethod
from utils.errors import ConfigError, NoSurvivorsError
from utils.logger import get_logger
from utils.state import deepMerge

logger = get_logger(__name__)

VARIANCE_TOLERANCE = {Regime.SLOW: 0.20, Regime.CRITICAL: 0.25}
MASS_FLUCTUATION_TOLERANCE = 0.20
CRITICAL_ASYMPTOTE_TOLERANCE = 0.05
KS_LEVEL = 0.01


def _column(rows: List[ReplicaRow], key: str) -> np.ndarray:
    return np.array([row.values[key] for row in rows], dtype=float)


def _vector_keys(prefix: str, dim: int) -> List[str]:
    return [f"{prefix}{j + 1}" for j in range(dim)]


def finite_horizon_extinction(total_mass: float, t: float, params: ModelParams) -> float:
    """P(|X_t| = 0) = exp(-|nu| alpha / (beta (1 - e^{-alpha t}))); tends to the extinction probability."""
    if total_mass == 0:
        return 1.0
    return math.exp(-total_mass * params.lambda_star / -math.expm1(-params.alpha * t))


class BaseSuite(ABC):
    # -----------------------------
    # BaseSuite: Abstract base class for all suites
    # -----------------------------
    """Abstract base class for all experiment suites."""

    replica: Optional[Callable[[ExperimentConfig, int], ReplicaRow]] = None

    def __init__(self, name: str):
        self.name = name

    def get_name(self) -> str:
        """Return the suite's name."""
        return self.name

    @abstractmethod
    def can_handle(self, cfg: ExperimentConfig) -> bool:
        """Check if the suite can run with this configuration."""
        raise NotImplementedError

    @abstractmethod
    def summarize(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> SuiteOut:
        """Summary and verdicts computed from the rows only."""
        raise NotImplementedError

    def process(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> Dict[str, Any]:
        """Summarize the rows and return the deltaState patch for the report."""
        out = self.summarize(cfg, rows)
        for name, verdict in out.verdicts.items():
            if not verdict.get("passed"):
                logger.warning(f"{self.name}: verdict '{name}' failed: {verdict}")
        return {
            "deltaState": {
                "summary": out.summary,
                "verdicts": out.verdicts,
                "errors": out.errors,
            }
        }


def _particle_resolution_ok(cfg: ExperimentConfig) -> bool:
    try:
        split_probability(Mechanism(MechanismKind(cfg.mechanism), cfg.params), cfg.resolution)
    except ValueError as e:
        logger.error(str(e))
        return False
    return True


# -----------------------------
# RegimeSuite: fluctuation components of the central limit theorems
# -----------------------------

def _normalizer(regime: Regime, t: float, mass: float, params: ModelParams) -> float:
    if regime == Regime.SLOW:
        return math.sqrt(mass)
    if regime == Regime.CRITICAL:
        return math.sqrt(t * mass)
    return math.exp((params.alpha - params.mu) * t)


def regime_replica(cfg: ExperimentConfig, replica_id: int) -> ReplicaRow:
    """Particle run to the horizon with a checkpoint at half of it.

    Components 1 and 3 are read at the horizon T; component 2 at T/2 with the
    mass limit estimated by V_hat = e^{-alpha T}|X_T|.
    """
    params = cfg.params
    horizon = cfg.horizon
    mid = horizon / 2.0
    rng = replica_stream(cfg.seed, replica_id)
    system = simulate_superprocess(
        cfg.nu, horizon, cfg.resolution, Mechanism.super(params), rng,
        checkpoints=[mid], population_cap=cfg.population_cap,
    )
    f_phi = integrate_phi(cfg.f, params)
    grad = grad_inner(cfg.f, params)
    late = evaluate_functionals(system, cfg.f)
    early = evaluate_functionals(system.at(mid), cfg.f)
    v_hat = math.exp(-params.alpha * horizon) * late.mass

    values = {"mass_mid": early.mass, "v_hat": v_hat, "c1": 0.0, "c2": 0.0, "c3": 0.0, "lln": 0.0,
              "residual_mid": 0.0, "residual_end": 0.0}
    values.update({key: float(v) for key, v in zip(_vector_keys("h", params.dim), late.h_value)})
    if system.survived:
        values["c1"] = v_hat
        values["c2"] = (early.mass - math.exp(params.alpha * mid) * v_hat) / math.sqrt(early.mass)
        values["c3"] = (late.integral_f - late.mass * f_phi) / _normalizer(cfg.regime, horizon, late.mass, params)
        values["lln"] = math.exp(-params.alpha * horizon) * (late.integral_f - f_phi * late.mass)
        for key, s, fn in (("residual_mid", mid, early), ("residual_end", horizon, late)):
            scaled = (fn.integral_f - fn.mass * f_phi) * math.exp(-(params.alpha - params.mu) * s)
            values[key] = abs(scaled - float(np.dot(grad, fn.h_value)))
    return ReplicaRow(replica_id=replica_id, survived=system.survived, mass=late.mass, v_t=v_hat, values=values)


def mass_fluctuation_variance(params: ModelParams, t: float, horizon: float) -> float:
    """Var of the second component given X_t: (2 beta / alpha)(1 - e^{-alpha (T - t)}).

    V_hat is read at the horizon T, so only the noise between t and T enters;
    the limit 2 beta / alpha is reached as T - t grows.
    """
    return 2.0 / params.lambda_star * -math.expm1(-params.alpha * (horizon - t))


def discretization_variance(f: Polynomial, n: int, params: ModelParams) -> float:
    """Var_phi(f) / n: sampling noise of the particle picture in the third component (before the critical 1/T)."""
    return integrate_phi(center(f, params) ** 2, params) / n


def _strict_survivors(rows: List[ReplicaRow]) -> List[ReplicaRow]:
    """Survivors with |X_T| at least half the survivors' median mass."""
    alive = [row for row in rows if row.survived]
    if not alive:
        return []
    threshold = 0.5 * float(np.median([row.mass for row in alive]))
    return [row for row in alive if row.mass >= threshold]


class RegimeSuite(BaseSuite):
    """Central limit theorem check for the configured regime."""

    replica = staticmethod(regime_replica)

    def __init__(self):
        super().__init__("clt")

    def can_handle(self, cfg: ExperimentConfig) -> bool:
        return _particle_resolution_ok(cfg)

    def summarize(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> SuiteOut:
        params = cfg.params
        alive = [row for row in rows if row.survived]
        strict = _strict_survivors(rows)
        primary = strict if cfg.survival_proxy == SurvivalProxy.HALF_MEDIAN else alive
        if len(primary) < 3:
            raise NoSurvivorsError(f"{len(primary)} surviving replicas out of {len(rows)}; nothing to condition on")

        m0 = discretized_mass(cfg.nu, cfg.resolution)
        survive_target = 1.0 - finite_horizon_extinction(m0, cfg.horizon, params)
        summary: Dict[str, Any] = {
            "regime": cfg.regime.value,
            "replicas": len(rows),
            "survivors": len(alive),
            "strict_survivors": len(strict),
            "survival_proxy": cfg.survival_proxy.value,
            "horizon": cfg.horizon,
            "checkpoint": cfg.horizon / 2.0,
            "survival_fraction": len(alive) / len(rows),
            "survival_limit": 1.0 - extinction_probability(m0, params),
            "lln_gap": float(np.mean(np.abs(_column(primary, "lln")))),
        }
        verdicts: Dict[str, Dict[str, Any]] = {
            "survival_fraction": binomial_check(len(alive), len(rows), survive_target, 4.0),
        }
        c1, c2, c3 = (_column(primary, key) for key in ("c1", "c2", "c3"))
        summary["component_means"] = {"c1": float(c1.mean()), "c2": float(c2.mean()), "c3": float(c3.mean())}

        c2_target = mass_fluctuation_variance(params, cfg.horizon / 2.0, cfg.horizon)
        c2_empirical, c2_se = variance_and_se(c2)
        summary["c2_variance"] = c2_empirical
        summary["c2_variance_se"] = c2_se
        summary["c2_target_variance"] = c2_target
        summary["c2_limit_variance"] = 2.0 / params.lambda_star
        verdicts["c2_variance"] = relative_check(c2_empirical, c2_target, MASS_FLUCTUATION_TOLERANCE)
        verdicts["c2_normal"] = ks_normal(c2, c2_target, KS_LEVEL)

        if cfg.regime in (Regime.SLOW, Regime.CRITICAL):
            limit = limit_variance(cfg.f, params).sigma_sq
            target = limit + discretization_variance(cfg.f, cfg.resolution, params) / (
                cfg.horizon if cfg.regime == Regime.CRITICAL else 1.0
            )
            empirical, se = variance_and_se(c3)
            summary["empirical_variance"] = empirical
            summary["empirical_variance_se"] = se
            summary["target_variance"] = limit
            summary["discretized_target"] = target
            verdicts["variance"] = relative_check(empirical, target, VARIANCE_TOLERANCE[cfg.regime])
            normality = ks_normal(c3, target, KS_LEVEL)
            summary["ks_statistic"] = normality["statistic"]
            verdicts["normality"] = normality
            verdicts["independence"] = pairwise_correlations({"c1": c1, "c2": c2, "c3": c3}, 4.0)
            other = alive if primary is strict else strict
            if len(other) >= 3:
                sensitivity, _ = variance_and_se(_column(other, "c3"))
                summary["sensitivity_variance"] = sensitivity
                if target > 0 and abs(sensitivity - empirical) > VARIANCE_TOLERANCE[cfg.regime] * target:
                    logger.warning(
                        f"survival proxies disagree: variance {empirical:.4g} vs {sensitivity:.4g}"
                    )
        else:
            mid_median = float(np.median(_column(primary, "residual_mid")))
            end_median = float(np.median(_column(primary, "residual_end")))
            summary["residual_median_mid"] = mid_median
            summary["residual_median_end"] = end_median
            verdicts["fast_residual"] = {
                "passed": bool(end_median <= 0.5 * mid_median),
                "median_mid": mid_median,
                "median_end": end_median,
            }
        return SuiteOut(status="ok", summary=summary, verdicts=verdicts)


# -----------------------------
# MassLawSuite: total mass law
# -----------------------------

def mass_law_replica(cfg: ExperimentConfig, replica_id: int) -> ReplicaRow:
    params = cfg.params
    t_end = max(cfg.horizon, cfg.laplace_time)
    rng = replica_stream(cfg.seed, replica_id)
    system = simulate_superprocess(
        cfg.nu, t_end, cfg.resolution, Mechanism.super(params), rng,
        checkpoints=[cfg.laplace_time, cfg.horizon], population_cap=cfg.population_cap,
    )
    at_horizon = system.at(cfg.horizon)
    mass = at_horizon.total_mass
    return ReplicaRow(
        replica_id=replica_id,
        survived=at_horizon.survived,
        mass=mass,
        v_t=math.exp(-params.alpha * cfg.horizon) * mass,
        values={"mass_laplace": system.at(cfg.laplace_time).total_mass},
    )


class MassLawSuite(BaseSuite):
    """Laplace functional, extinction fraction and martingale-limit law of the total mass."""

    replica = staticmethod(mass_law_replica)

    def __init__(self):
        super().__init__("mass-law")

    def can_handle(self, cfg: ExperimentConfig) -> bool:
        return _particle_resolution_ok(cfg)

    def summarize(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> SuiteOut:
        params = cfg.params
        m0 = discretized_mass(cfg.nu, cfg.resolution)
        verdicts: Dict[str, Dict[str, Any]] = {}
        laplace_masses = _column(rows, "mass_laplace")
        for theta in cfg.thetas:
            target = math.exp(-m0 * total_mass_laplace(theta, cfg.laplace_time, params))
            verdicts[f"laplace_theta_{theta:g}"] = laplace_check(laplace_masses, theta, target, 4.0)

        extinct = sum(1 for row in rows if not row.survived)
        finite_target = finite_horizon_extinction(m0, cfg.horizon, params)
        verdicts["extinction"] = binomial_check(extinct, len(rows), finite_target, 4.0)

        rng = reference_stream(cfg.seed)
        draws = sample_v_infinity(m0, rng, params, size=cfg.v_draws, t=cfg.horizon)
        limit_draws = sample_v_infinity(m0, rng, params, size=cfg.v_draws)
        v_all = np.array([row.v_t for row in rows])
        verdicts["ks_all"] = ks_two_sample(v_all, draws, KS_LEVEL)
        ks_limit = ks_two_sample(v_all, limit_draws, KS_LEVEL)
        v_alive = np.array([row.v_t for row in rows if row.survived])
        positive = draws[draws > 0]
        if len(v_alive) and len(positive):
            verdicts["ks_survivors"] = ks_two_sample(v_alive, positive, KS_LEVEL)

        summary = {
            "replicas": len(rows),
            "survivors": len(rows) - extinct,
            "initial_mass": m0,
            "extinct_fraction": extinct / len(rows),
            "extinction_probability": extinction_probability(m0, params),
            "extinction_at_horizon": finite_target,
            "ks_statistic": verdicts["ks_all"]["statistic"],
            "ks_limit_statistic": ks_limit["statistic"],
            "v_mean": float(v_all.mean()),
        }
        return SuiteOut(status="ok", summary=summary, verdicts=verdicts)


# -----------------------------
# BackboneSuite: backbone martingales and the limit representation
# -----------------------------

def _backbone_times(horizon: float) -> Dict[str, float]:
    return {"early": horizon / 5.0, "mid": horizon / 2.0, "end": horizon}


def backbone_replica(cfg: ExperimentConfig, replica_id: int) -> ReplicaRow:
    params = cfg.params
    times = _backbone_times(cfg.horizon)
    gamma = poisson_initial(cfg.nu, replica_stream(cfg.seed, replica_id, StreamPurpose.INITIAL), params)
    state = simulate_backbone(
        gamma, cfg.horizon, replica_stream(cfg.seed, replica_id), params,
        engine=BackboneEngine.GENERATIONS, checkpoints=list(times.values()), population_cap=cfg.population_cap,
    )
    values: Dict[str, float] = {}
    for label, t in times.items():
        values[f"w_{label}"] = backbone_martingales(state, t).W
    pair = backbone_martingales(state)
    values.update({key: float(v) for key, v in zip(_vector_keys("i", params.dim), pair.I)})
    values["initial_atoms"] = float(len(gamma))
    if cfg.regime == Regime.FAST:
        # one delta_0 backbone per replica tabulates the J draws of the representation
        single = simulate_backbone(
            AtomicMeasure.dirac(np.zeros(params.dim)), cfg.horizon,
            replica_stream(cfg.seed, replica_id, StreamPurpose.REFERENCE), params,
            engine=BackboneEngine.GENERATIONS, population_cap=cfg.population_cap,
        )
        j = backbone_martingales(single).I
        values.update({key: float(v) for key, v in zip(_vector_keys("j", params.dim), j)})
    return ReplicaRow(
        replica_id=replica_id,
        survived=state.size > 0,
        mass=float(state.size),
        v_t=pair.W / params.lambda_star,
        values=values,
    )


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if a.std() == 0.0 or b.std() == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _fisher_gap(r1: float, n1: int, r2: float, n2: int) -> float:
    z1, z2 = np.arctanh(np.clip([r1, r2], -0.999999, 0.999999))
    return float(abs(z1 - z2) / math.sqrt(1.0 / (n1 - 3) + 1.0 / (n2 - 3)))


class BackboneSuite(BaseSuite):
    """Backbone W/I martingales against the compound-Poisson mass limit."""

    replica = staticmethod(backbone_replica)

    def __init__(self):
        super().__init__("backbone")

    def can_handle(self, cfg: ExperimentConfig) -> bool:
        return True

    def summarize(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> SuiteOut:
        params = cfg.params
        mass = cfg.nu.total_mass
        verdicts: Dict[str, Dict[str, Any]] = {}
        w_target = params.lambda_star * mass
        for label, t in _backbone_times(cfg.horizon).items():
            check = mean_check(_column(rows, f"w_{label}"), w_target, 4.0)
            check["t"] = t
            verdicts[f"w_mean_{label}"] = check

        v_backbone = np.array([row.v_t for row in rows])
        draws = sample_v_infinity(mass, reference_stream(cfg.seed), params, size=cfg.v_draws)
        verdicts["ks_v_limit"] = ks_two_sample(v_backbone, draws, KS_LEVEL)
        verdicts["v_mean"] = mean_check(v_backbone, mass, 4.0)

        summary: Dict[str, Any] = {
            "replicas": len(rows),
            "survivors": sum(1 for row in rows if row.survived),
            "w_mean": float(_column(rows, "w_end").mean()),
            "ks_statistic": verdicts["ks_v_limit"]["statistic"],
            "empty_starts": sum(1 for row in rows if row.values["initial_atoms"] == 0),
        }

        if cfg.regime == Regime.FAST and not cfg.nu.is_empty():
            scale = 1.0 / params.lambda_star
            j_draws = np.column_stack([_column(rows, key) for key in _vector_keys("j", params.dim)])
            h_hat, v_hat = sample_limit_pair(
                cfg.nu, j_draws, reference_stream(cfg.seed, StreamPurpose.INITIAL), params, cfg.v_draws
            )
            h_backbone = scale * _column(rows, "i1")
            mean_gap = abs(h_backbone.mean() - h_hat[:, 0].mean())
            mean_se = math.sqrt(h_backbone.var(ddof=1) / len(rows) + h_hat[:, 0].var(ddof=1) / len(h_hat))
            r_backbone = _correlation(h_backbone, v_backbone)
            r_hat = _correlation(h_hat[:, 0], v_hat)
            fisher = _fisher_gap(r_backbone, len(rows), r_hat, len(h_hat))
            verdicts["representation"] = {
                "passed": bool(mean_gap <= 4.0 * mean_se + 1e-12 and fisher <= 4.0),
                "h_mean_backbone": float(h_backbone.mean()),
                "h_mean_representation": float(h_hat[:, 0].mean()),
                "corr_backbone": r_backbone,
                "corr_representation": r_hat,
                "fisher_z": fisher,
            }
        return SuiteOut(status="ok", summary=summary, verdicts=verdicts)


# -----------------------------
# VarianceBridgeSuite: Var<f, X_t> against the second cumulant
# -----------------------------

def bridge_replica(cfg: ExperimentConfig, replica_id: int) -> ReplicaRow:
    params = cfg.params
    rng = replica_stream(cfg.seed, replica_id)
    system = simulate_superprocess(
        cfg.nu, cfg.laplace_time, cfg.resolution, Mechanism.super(params), rng,
        population_cap=cfg.population_cap,
    )
    fn = evaluate_functionals(system, cfg.f)
    return ReplicaRow(
        replica_id=replica_id,
        survived=system.survived,
        mass=fn.mass,
        v_t=math.exp(-params.alpha * cfg.laplace_time) * fn.mass,
        values={"integral_f": fn.integral_f},
    )


class VarianceBridgeSuite(BaseSuite):
    """Empirical Var<f, X_t> at the Laplace time against -<u_f^2(., t), nu>."""

    replica = staticmethod(bridge_replica)

    def __init__(self):
        super().__init__("bridge")

    def can_handle(self, cfg: ExperimentConfig) -> bool:
        return _particle_resolution_ok(cfg)

    def summarize(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> SuiteOut:
        values = _column(rows, "integral_f")
        target, error = get_engine(cfg.params).cumulant(cfg.f, cfg.nu, cfg.laplace_time, 2)
        mean_target, _ = get_engine(cfg.params).cumulant(cfg.f, cfg.nu, cfg.laplace_time, 1)
        verdicts = {
            "variance_bridge": variance_check(values, target, 4.0),
            "mean": mean_check(values, mean_target, 4.0),
        }
        summary = {
            "replicas": len(rows),
            "survivors": sum(1 for row in rows if row.survived),
            "empirical_variance": verdicts["variance_bridge"]["variance"],
            "target_variance": target,
            "target_error": error,
        }
        return SuiteOut(status="ok", summary=summary, verdicts=verdicts)


# -----------------------------
# ValidationSuite: property checks and reference runs
# -----------------------------

REFERENCE_SLOW = dict(sigma=1.0, mu=1.0, alpha=1.0, beta=0.5)
REFERENCE_CRITICAL = dict(sigma=1.0, mu=1.0, beta=1.0, critical=True)
REFERENCE_FAST = dict(sigma=1.0, mu=1.0, alpha=3.0, beta=1.0)
REFERENCE_UNIT = dict(sigma=1.0, mu=1.0, alpha=1.0, beta=1.0)


def check_moment_identity(params: ModelParams, fs: List[Polynomial], orders, xs, ts) -> Dict[str, Any]:
    """u_f^k = u*_f^k - (alpha/beta) V_f^k on a grid, within the summed error estimates."""
    engine = get_engine(params)
    worst = 0.0
    failures = []
    for f in fs:
        for k in orders:
            for x in xs:
                for t in ts:
                    u = engine.u_moment(f, [x], t, k, MechanismKind.SUPER)
                    u_sub = engine.u_moment(f, [x], t, k, MechanismKind.SUB)
                    v = engine.backbone_moment(f, [x], t, k)
                    gap = abs(u.value - (u_sub.value - params.lambda_star * v.value))
                    scale = max(1.0, abs(u.value))
                    allowed = (1e-12 * scale if k == 1 else
                               u.abs_error_estimate + u_sub.abs_error_estimate
                               + params.lambda_star * v.abs_error_estimate + 1e-10 * scale)
                    worst = max(worst, gap)
                    if gap > allowed:
                        failures.append({"f": f.format(), "k": k, "x": x, "t": t, "gap": gap, "allowed": allowed})
    return {"passed": not failures, "max_gap": worst, "failures": failures[:10]}


def check_second_moment_sign(params: ModelParams, f: Polynomial, xs, ts) -> Dict[str, Any]:
    engine = get_engine(params)
    worst = -math.inf
    for kind in (MechanismKind.SUPER, MechanismKind.SUB):
        for x in xs:
            for t in ts:
                worst = max(worst, engine.u_moment(f, [x], t, 2, kind).value)
    return {"passed": bool(worst <= 1e-12), "max_value": worst}


def check_mean_martingale(params: ModelParams, ts) -> Dict[str, Any]:
    one = Polynomial.constant(params.dim, 1.0)
    engine = get_engine(params)
    gaps = [abs(math.exp(-params.alpha * t) * engine.u_moment(one, np.zeros(params.dim), t, 1).value - 1.0) for t in ts]
    return {"passed": bool(max(gaps) <= 1e-12), "max_gap": max(gaps)}


def check_critical_methods(params: ModelParams, fs: List[Polynomial]) -> Dict[str, Any]:
    details = {}
    passed = True
    for f in fs:
        closed = sigma_critical(f, params, VarianceMethod.CLOSED_FORM).sigma_sq
        quad = sigma_critical(f, params, VarianceMethod.QUADRATURE).sigma_sq
        gap = abs(closed - quad) / abs(closed) if closed else abs(quad)
        details[f.format()] = {"closed_form": closed, "quadrature": quad, "relative_gap": gap}
        passed = passed and gap < 1e-8
    return {"passed": passed, "functions": details}


def check_slow_asymptote(params: ModelParams, f: Polynomial, ts=(6.0, 9.0, 12.0)) -> Dict[str, Any]:
    target = sigma_slow(f, params).sigma_sq
    values = [normalized_second_moment(f, [0.0], t, params) for t in ts]
    gaps = [abs(v - target) for v in values]
    shrinking = all(gaps[i + 1] * 2.0 <= gaps[i] for i in range(len(gaps) - 1))
    relative = gaps[-1] / target
    return {"passed": bool(relative < 0.02 and shrinking), "values": values, "target": target,
            "relative_gap": relative, "shrinking": shrinking}


def check_critical_asymptote(params: ModelParams, f: Polynomial, t: float = 12.0) -> Dict[str, Any]:
    target = sigma_critical(f, params).sigma_sq
    value = normalized_second_moment(f, [0.0], t, params)
    check = relative_check(value, target, CRITICAL_ASYMPTOTE_TOLERANCE)
    check["t"] = t
    return check


def check_fast_bound(params: ModelParams, f: Polynomial) -> Dict[str, Any]:
    report = fast_regime_bound_check(f, params, [[0.0], [1.0]], [2.0, 4.0, 6.0, 8.0])
    at_zero = report.values[0]
    agreement = abs(at_zero[1] - at_zero[3]) <= 0.10 * max(abs(at_zero[1]), 1e-300)
    return {
        "passed": bool(report.finite and report.stabilizing and agreement),
        "max_value": report.max_value,
        "stabilizing": report.stabilizing,
        "nonincreasing": report.nonincreasing,
        "values_at_zero": at_zero,
    }


class ValidationSuite(BaseSuite):
    """Analytic property checks plus nested statistical suites at reference parameters.

    ``runner(name, cfg)`` runs a nested suite and is provided by the coordinator.
    """

    def __init__(self, runner: Optional[Callable[[str, ExperimentConfig], Any]] = None):
        super().__init__("validate")
        self.runner = runner

    def can_handle(self, cfg: ExperimentConfig) -> bool:
        return True

    def _analytic(self, quick: bool) -> Dict[str, Dict[str, Any]]:
        unit = ModelParams(**REFERENCE_UNIT)
        slow = ModelParams(**REFERENCE_SLOW)
        critical = ModelParams(**REFERENCE_CRITICAL)
        fast = ModelParams(**REFERENCE_FAST)
        x = Polynomial.parse("x")
        fs = [x, Polynomial.parse("x^2 - 0.5")]
        orders = (1, 2, 3) if quick else (1, 2, 3, 4)
        ts = (0.5, 1.0) if quick else (0.5, 1.0, 2.0)
        checks = {
            "moment_identity": lambda: check_moment_identity(unit, fs, orders, (0.0, 1.0), ts),
            "second_moment_sign": lambda: check_second_moment_sign(unit, x, (0.0, 1.0), ts),
            "mean_martingale": lambda: check_mean_martingale(unit, (0.5, 1.0, 2.0, 5.0)),
            "critical_methods": lambda: check_critical_methods(critical, [x, Polynomial.parse("x^3")]),
            "slow_asymptote": lambda: check_slow_asymptote(slow, x),
            "critical_asymptote": lambda: check_critical_asymptote(critical, x),
            "fast_bound": lambda: check_fast_bound(fast, x),
        }
        verdicts = {}
        for name, check in checks.items():
            logger.info(f"validate: {name}")
            verdicts[name] = check()
        return verdicts

    def _reference_config(self, cfg: ExperimentConfig, params: dict, **fields) -> ExperimentConfig:
        data = dict(
            params=ModelParams(**params),
            f=Polynomial.parse("x"),
            nu=AtomicMeasure.dirac([0.0]),
            horizon=cfg.horizon,
            laplace_time=1.0,
            thetas=[0.5, 1.0, 2.0],
            resolution=cfg.resolution,
            replicas=cfg.replicas,
            seed=cfg.seed,
            workers=cfg.workers,
            v_draws=cfg.v_draws,
            population_cap=cfg.population_cap,
            output_dir=cfg.output_dir,
            quick=cfg.quick,
        )
        deepMerge(data, fields)
        return ExperimentConfig(**data)

    def _nested(self, cfg: ExperimentConfig, quick: bool) -> Dict[str, Dict[str, Any]]:
        runs = [
            ("mass-law", self._reference_config(cfg, REFERENCE_UNIT, horizon=min(cfg.horizon, 4.0))),
            ("bridge", self._reference_config(cfg, REFERENCE_UNIT)),
            ("backbone", self._reference_config(cfg, REFERENCE_UNIT, horizon=max(cfg.horizon, 6.0))),
        ]
        if not quick:
            # particle cost grows like n^2 e^{alpha T}
            runs.append((
                "clt",
                self._reference_config(
                    cfg, REFERENCE_SLOW, horizon=min(cfg.horizon, 5.0), resolution=min(cfg.resolution, 50)
                ),
            ))
        verdicts = {}
        for name, sub_cfg in runs:
            logger.info(f"validate: nested {name} run ({sub_cfg.replicas} replicas)")
            report = self.runner(name, sub_cfg)
            for key, verdict in report.verdicts.items():
                verdicts[f"{name}.{key}"] = verdict
        return verdicts

    def summarize(self, cfg: ExperimentConfig, rows: List[ReplicaRow]) -> SuiteOut:
        quick = cfg.quick
        verdicts = self._analytic(quick)
        errors: List[str] = []
        if self.runner is not None:
            verdicts.update(self._nested(cfg, quick))
        else:
            errors.append("no suite runner attached; statistical checks skipped")
        summary = {
            "profile": "quick" if quick else "full",
            "checks": len(verdicts),
            "passed_checks": sum(1 for v in verdicts.values() if v.get("passed")),
        }
        return SuiteOut(status="ok", summary=summary, verdicts=verdicts, errors=errors)


# Suite registry and aliases for convenient resolution
SUITE_REGISTRY = {
    "clt": RegimeSuite,
    "mass-law": MassLawSuite,
    "backbone": BackboneSuite,
    "bridge": VarianceBridgeSuite,
    "validate": ValidationSuite,
}

SUITE_ALIASES = {
    "regime": "clt",
    "mass_law": "mass-law",
    "masslaw": "mass-law",
    "variance-bridge": "bridge",
    "validation": "validate",
}


def resolve_suite_name(name: str) -> str:
    name = (name or "").strip().lower()
    resolved = SUITE_ALIASES.get(name, name)
    if resolved not in SUITE_REGISTRY:
        raise ConfigError(f"unknown suite '{name}' (known: {', '.join(sorted(SUITE_REGISTRY))})")
    return resolved
