"""
Moment functionals of the OU superprocess, its dressing and its backbone.

Differentiating the log-Laplace equation k times at zero (Faa di Bruno) gives
for the mechanism psi(l) = c l + beta l^2, c = -alpha (Super) or +alpha (Sub):

    u^1(x, t) = e^{-c t} P_t f(x)
    u^k(x, t) = -int_0^t P^{-c}_{t-s}[ sum_{m in B_k} a_m psi^{(|m|)}(0) prod_j (u^j(., s))^{m_j} ](x) ds

and for the backbone moments V^k (k >= 2)

    V^k(x, t) = (beta/alpha) int_0^t P^alpha_{t-s}[ sum_{m in B_k} a_m (psi*^{(|m|)}(-l*) prod_j w_j^{m_j}
                                                   - psi*^{(|m|)}(0) prod_j (u*^j)^{m_j}) - 2 alpha u*^k ](., s) ds

with w_j = -(alpha/beta) V^j + u*^j (w_1 = P^alpha_s f exactly). Only psi''
is non-zero beyond first order, so just the |m| = 2 partitions contribute.

Each time layer is a Polynomial in x: the bracket is assembled by polynomial
products and pushed forward exactly by the semigroup, so quadrature happens
in time only. Every layer carries a coefficientwise error polynomial next to
its value; evaluating that at |x| bounds the quadrature error at x.
"""

import math
import threading
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from lab.tools.model_core import AtomicMeasure, ModelParams, Polynomial
from lab.tools.ou_semigroup import SemigroupAction, get_semigroup
from lab.tools.quadrature import DEFAULT_ORDER, DEFAULT_REL_TOL, DEFAULT_TOL, adaptive_gauss_legendre
from utils.contracts import MomentKind, MomentResult
from utils.logger import get_logger

logger = get_logger(__name__)

MAX_MOMENT_ORDER = 4
MAX_PARTITION_ORDER = 8


class MechanismKind(str, Enum):
    SUPER = "super"
    SUB = "sub"


class Mechanism(NamedTuple):
    """psi(l) = -alpha l + beta l^2 (Super) or psi*(l) = alpha l + beta l^2 (Sub)."""
    kind: MechanismKind
    params: ModelParams

    @classmethod
    def super(cls, params: ModelParams) -> "Mechanism":
        return cls(MechanismKind.SUPER, params)

    @classmethod
    def sub(cls, params: ModelParams) -> "Mechanism":
        return cls(MechanismKind.SUB, params)

    @property
    def linear_coefficient(self) -> float:
        return -self.params.alpha if self.kind == MechanismKind.SUPER else self.params.alpha

    @property
    def semigroup_weight(self) -> float:
        """a in P^a_t = e^{a t} P_t for the first moment under this mechanism."""
        return -self.linear_coefficient

    def __call__(self, lam: float) -> float:
        return self.linear_coefficient * lam + self.params.beta * lam * lam

    def derivative(self, order: int, at: float = 0.0) -> float:
        if order == 0:
            return self(at)
        if order == 1:
            return self.linear_coefficient + 2.0 * self.params.beta * at
        if order == 2:
            return 2.0 * self.params.beta
        return 0.0


class PartitionTerm(NamedTuple):
    m: Tuple[int, ...]
    coeff: int

    @property
    def order(self) -> int:
        """|m| = sum_j m_j, the order of psi's derivative multiplying the term."""
        return sum(self.m)


@lru_cache(maxsize=None)
def _partitions(k: int) -> Tuple[PartitionTerm, ...]:
    found: List[Tuple[int, ...]] = []

    def walk(j: int, remaining: int, prefix: Tuple[int, ...]):
        if j > k:
            if remaining == 0:
                found.append(prefix)
            return
        for mj in range(remaining // j + 1):
            walk(j + 1, remaining - j * mj, prefix + (mj,))

    walk(1, k, ())
    terms = []
    for m in sorted(found, reverse=True):
        denom = 1
        for j, mj in enumerate(m, start=1):
            denom *= math.factorial(mj) * math.factorial(j) ** mj
        terms.append(PartitionTerm(m, math.factorial(k) // denom))
    return tuple(terms)


def faa_di_bruno_terms(k: int) -> List[PartitionTerm]:
    """All m with sum_j j m_j = k and a_m = k! / prod(m_j! (j!)^{m_j}).

    Ordered lexicographically from (k, 0, ..., 0) down to (0, ..., 0, 1).
    """
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_PARTITION_ORDER:
        raise ValueError(f"Faa di Bruno order must be an integer in 1..{MAX_PARTITION_ORDER}, got {k!r}")
    return list(_partitions(int(k)))


def _reduced_terms(k: int) -> List[PartitionTerm]:
    """B_k: every partition except the single-block one (0, ..., 0, 1)."""
    unit = tuple([0] * (k - 1) + [1])
    return [term for term in faa_di_bruno_terms(k) if term.m != unit]


# -----------------------------
# Error-carrying layers
# -----------------------------

class Layer:
    """A Polynomial value with a coefficientwise non-negative error bound."""

    __slots__ = ("value", "error")

    def __init__(self, value: Polynomial, error: Optional[Polynomial] = None):
        self.value = value
        self.error = error if error is not None else Polynomial.zero(value.dim)

    @classmethod
    def exact(cls, value: Polynomial) -> "Layer":
        return cls(value)

    def __add__(self, other: "Layer") -> "Layer":
        return Layer(self.value + other.value, self.error + other.error)

    def __sub__(self, other: "Layer") -> "Layer":
        return Layer(self.value - other.value, self.error + other.error)

    def __mul__(self, scalar: float) -> "Layer":
        return Layer(self.value * float(scalar), self.error * abs(float(scalar)))

    __rmul__ = __mul__

    def product(self, other: "Layer") -> "Layer":
        value = self.value * other.value
        error = self.value.abs() * other.error + other.value.abs() * self.error + self.error * other.error
        return Layer(value, error)

    def max_abs_coeff(self) -> float:
        return self.value.max_abs_coeff()

    def abs(self) -> "Layer":
        return Layer(self.value.abs(), self.error)

    def bound_at(self, x: np.ndarray) -> float:
        return float(self.error(np.abs(x)))


def _power_product(factors: List[Tuple[Layer, int]], dim: int) -> Layer:
    result: Optional[Layer] = None
    for layer, power in factors:
        for _ in range(power):
            result = layer if result is None else result.product(layer)
    return result if result is not None else Layer.exact(Polynomial.constant(dim, 1.0))


# -----------------------------
# Engine
# -----------------------------

MechanismLike = Union[Mechanism, MechanismKind, str]


class MomentEngine:
    """
    Evaluates u_f^k (Super), u*_f^k (Sub) and V_f^k for one parameter set.

    Time layers are memoized per (f, kind, k, t) so the nested quadratures of
    higher orders reuse the lower-order nodes. The memo is guarded by a lock;
    an engine can be shared between threads.
    """

    def __init__(
        self,
        params: ModelParams,
        tol: float = DEFAULT_TOL,
        rel_tol: float = DEFAULT_REL_TOL,
        order: int = DEFAULT_ORDER,
        panels: int = 1,
    ):
        self.params = params
        self.tol = tol
        self.rel_tol = rel_tol
        self.order = order
        self.panels = panels
        self.semigroup: SemigroupAction = get_semigroup(params)
        self._layers: Dict[tuple, Layer] = {}
        self._lock = threading.Lock()

    def _mechanism(self, mech: MechanismLike) -> Mechanism:
        if isinstance(mech, Mechanism):
            if mech.params != self.params:
                raise ValueError("mechanism parameters differ from the engine's parameters")
            return mech
        return Mechanism(MechanismKind(mech), self.params)

    def _cached(self, key: tuple, build: Callable[[], Layer]) -> Layer:
        layer = self._layers.get(key)
        if layer is not None:
            return layer
        layer = build()
        with self._lock:
            self._layers.setdefault(key, layer)
        return layer

    def _push(self, layer: Layer, tau: float, weight: float) -> Layer:
        # transition matrices are entrywise non-negative, so pushing the
        # error polynomial keeps it a coefficientwise bound
        return Layer(
            self.semigroup.apply(layer.value, tau, weight),
            self.semigroup.apply(layer.error, tau, weight).abs(),
        )

    def _integrate(self, integrand: Callable[[float], Layer], t: float) -> Layer:
        result = adaptive_gauss_legendre(
            integrand, 0.0, t, tol=self.tol, rel_tol=self.rel_tol, order=self.order, panels=self.panels
        )
        return Layer(result.value.value, result.value.error + result.discrepancy.value)

    # ---- u^k for Super / Sub ----

    def u_layer(self, f: Polynomial, t: float, k: int, mech: MechanismLike = MechanismKind.SUPER) -> Layer:
        mech = self._mechanism(mech)
        key = ("u", mech.kind, f, int(k), float(t))
        return self._cached(key, lambda: self._build_u(f, float(t), int(k), mech))

    def _build_u(self, f: Polynomial, t: float, k: int, mech: Mechanism) -> Layer:
        weight = mech.semigroup_weight
        if k == 1:
            return Layer.exact(self.semigroup.apply(f, t, weight))
        weighted = [
            (term, term.coeff * mech.derivative(term.order, 0.0)) for term in _reduced_terms(k)
        ]
        weighted = [(term, c) for term, c in weighted if c != 0.0]

        def integrand(s: float) -> Layer:
            bracket = None
            for term, c in weighted:
                factors = [
                    (self.u_layer(f, s, j, mech), mj) for j, mj in enumerate(term.m, start=1) if mj
                ]
                piece = _power_product(factors, f.dim) * c
                bracket = piece if bracket is None else bracket + piece
            return self._push(bracket, t - s, weight) * -1.0

        logger.debug(f"u^{k} ({mech.kind.value}) layer at t={t:.4g}")
        return self._integrate(integrand, t)

    # ---- V^k for the backbone ----

    def v_layer(self, f: Polynomial, t: float, k: int) -> Layer:
        key = ("v", f, int(k), float(t))
        return self._cached(key, lambda: self._build_v(f, float(t), int(k)))

    def _w_layer(self, f: Polynomial, s: float, j: int) -> Layer:
        if j == 1:
            return Layer.exact(self.semigroup.apply(f, s, self.params.alpha))
        ratio = self.params.alpha / self.params.beta
        return self.v_layer(f, s, j) * -ratio + self.u_layer(f, s, j, MechanismKind.SUB)

    def _build_v(self, f: Polynomial, t: float, k: int) -> Layer:
        alpha, beta = self.params.alpha, self.params.beta
        if k == 1:
            scale = -2.0 * (beta / alpha) * math.sinh(alpha * t)
            return Layer.exact(self.semigroup.apply(f, t) * scale)
        sub = Mechanism.sub(self.params)
        shifted = -self.params.lambda_star
        weighted = []
        for term in _reduced_terms(k):
            at_star = term.coeff * sub.derivative(term.order, shifted)
            at_zero = term.coeff * sub.derivative(term.order, 0.0)
            if at_star != 0.0 or at_zero != 0.0:
                weighted.append((term, at_star, at_zero))

        def integrand(s: float) -> Layer:
            bracket = self.u_layer(f, s, k, sub) * (-2.0 * alpha)
            for term, at_star, at_zero in weighted:
                present = [(j, mj) for j, mj in enumerate(term.m, start=1) if mj]
                w_part = _power_product([(self._w_layer(f, s, j), mj) for j, mj in present], f.dim)
                u_part = _power_product([(self.u_layer(f, s, j, sub), mj) for j, mj in present], f.dim)
                bracket = bracket + w_part * at_star - u_part * at_zero
            return self._push(bracket, t - s, alpha) * (beta / alpha)

        logger.debug(f"V^{k} layer at t={t:.4g}")
        return self._integrate(integrand, t)

    # ---- public evaluation ----

    def _check(self, f: Polynomial, x, t: float, k: int) -> np.ndarray:
        if f.dim != self.params.dim:
            raise ValueError(f"polynomial has dim={f.dim}, parameters have dim={self.params.dim}")
        if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_MOMENT_ORDER:
            raise ValueError(f"moment order must be an integer in 1..{MAX_MOMENT_ORDER}, got {k!r}")
        if not t >= 0.0 or not math.isfinite(t):
            raise ValueError(f"time must be finite and non-negative, got t={t}")
        point = np.atleast_1d(np.asarray(x, dtype=float))
        if point.shape != (self.params.dim,):
            raise ValueError(f"point {x!r} does not have dim={self.params.dim}")
        return point

    def u_moment(self, f: Polynomial, x, t: float, k: int, mech: MechanismLike = MechanismKind.SUPER) -> MomentResult:
        point = self._check(f, x, t, k)
        mech = self._mechanism(mech)
        layer = self.u_layer(f, t, k, mech)
        kind = MomentKind.U_SUPER if mech.kind == MechanismKind.SUPER else MomentKind.U_SUB
        return MomentResult(
            value=float(layer.value(point)),
            abs_error_estimate=0.0 if k == 1 else layer.bound_at(point),
            k=k,
            kind=kind,
            x=point.tolist(),
            t=float(t),
        )

    def backbone_moment(self, f: Polynomial, x, t: float, k: int) -> MomentResult:
        point = self._check(f, x, t, k)
        layer = self.v_layer(f, t, k)
        return MomentResult(
            value=float(layer.value(point)),
            abs_error_estimate=0.0 if k == 1 else layer.bound_at(point),
            k=k,
            kind=MomentKind.V_BACKBONE,
            x=point.tolist(),
            t=float(t),
        )

    def cumulant(self, f: Polynomial, nu: AtomicMeasure, t: float, k: int) -> Tuple[float, float]:
        """k-th cumulant of <f, X_t> under P_nu, with its error bound.

        log E_nu e^{-theta <f, X_t>} = -<u_{theta f}(., t), nu>, so the k-th
        cumulant is (-1)^{k+1} <u_f^k(., t), nu>.
        """
        if nu.is_empty():
            return 0.0, 0.0
        value = 0.0
        error = 0.0
        for x, mass in nu.atoms:
            result = self.u_moment(f, x, t, k, MechanismKind.SUPER)
            value += mass * result.value
            error += mass * result.abs_error_estimate
        return (-1.0) ** (k + 1) * value, error


_engines: Dict[ModelParams, MomentEngine] = {}
_engines_lock = threading.Lock()


def get_engine(params: ModelParams) -> MomentEngine:
    """Shared MomentEngine (default tolerances) per parameter set."""
    engine = _engines.get(params)
    if engine is None:
        with _engines_lock:
            engine = _engines.setdefault(params, MomentEngine(params))
    return engine


def u_moment(f: Polynomial, x, t: float, k: int, mech: Mechanism) -> MomentResult:
    return get_engine(mech.params).u_moment(f, x, t, k, mech)


def backbone_moment(f: Polynomial, x, t: float, k: int, params: ModelParams) -> MomentResult:
    return get_engine(params).backbone_moment(f, x, t, k)


def cumulant(f: Polynomial, nu: AtomicMeasure, t: float, k: int, params: ModelParams) -> Tuple[float, float]:
    return get_engine(params).cumulant(f, nu, t, k)


# -----------------------------
# Closed forms and samplers
# -----------------------------

def total_mass_laplace(theta: float, t: float, params: ModelParams) -> float:
    """v_theta(t) with E_nu exp(-theta |X_t|) = exp(-|nu| v_theta(t)).

    Solves v' = alpha v - beta v^2, v(0) = theta. Written as
    alpha theta / ((alpha - beta theta) e^{-alpha t} + beta theta) so large t
    does not overflow.
    """
    if theta < 0 or t < 0:
        raise ValueError(f"theta and t must be non-negative, got theta={theta}, t={t}")
    if theta == 0:
        return 0.0
    alpha, beta = params.alpha, params.beta
    return alpha * theta / ((alpha - beta * theta) * math.exp(-alpha * t) + beta * theta)


def extinction_probability(total_mass: float, params: ModelParams) -> float:
    if total_mass < 0:
        raise ValueError(f"total mass must be non-negative, got {total_mass}")
    return math.exp(-total_mass * params.lambda_star)


def sample_v_infinity(
    total_mass: float,
    rng: np.random.Generator,
    params: ModelParams,
    size: Optional[int] = None,
    t: Optional[float] = None,
):
    """Compound-Poisson draws of V_inf: Poisson(|nu| alpha/beta) many Exp(mean beta/alpha) summands.

    With ``t`` given, draws e^{-alpha t}|X_t| instead, which is compound
    Poisson too with alpha/beta replaced by alpha/(beta(1 - e^{-alpha t})).
    A sum of N unit-rate exponentials is Gamma(N), so each draw costs one
    Poisson and one Gamma variate. Returns a float when ``size`` is None.
    """
    if total_mass < 0:
        raise ValueError(f"total mass must be non-negative, got {total_mass}")
    intensity = params.lambda_star
    if t is not None:
        if not t > 0:
            raise ValueError(f"t must be positive, got {t}")
        intensity /= -math.expm1(-params.alpha * t)
    counts = rng.poisson(total_mass * intensity, size=size)
    shapes = np.maximum(counts, 1)
    draws = rng.gamma(shapes, 1.0 / intensity)
    values = np.where(counts > 0, draws, 0.0)
    if size is None:
        return float(values)
    return values


def sample_limit_pair(
    nu: AtomicMeasure,
    j_draws: np.ndarray,
    rng: np.random.Generator,
    params: ModelParams,
    size: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draws of (H_hat, V_hat) from the backbone representation of the fast-regime limit.

    H_hat = (beta/alpha)(sum_i J_i + sum_i x_i E_i) and V_hat = (beta/alpha) sum_i E_i
    over N ~ Poisson(l* |nu|) atoms x_i ~ nu/|nu|, E_i ~ Exp(1), J_i resampled
    from ``j_draws`` (rows of I_T tabulated from delta_0 backbones).
    """
    dim = params.dim
    j_draws = np.asarray(j_draws, dtype=float).reshape(-1, dim)
    h = np.zeros((size, dim))
    v = np.zeros(size)
    if nu.is_empty():
        return h, v
    if len(j_draws) == 0:
        raise ValueError("need at least one tabulated I_T draw")
    probabilities = nu.probabilities()
    counts = rng.poisson(params.lambda_star * nu.total_mass, size=size)
    scale = 1.0 / params.lambda_star
    for i, n in enumerate(counts):
        if n == 0:
            continue
        atoms = rng.choice(len(nu), size=n, p=probabilities)
        e = rng.standard_exponential(n)
        j = j_draws[rng.integers(0, len(j_draws), size=n)]
        h[i] = scale * (j.sum(axis=0) + (nu.positions[atoms] * e[:, None]).sum(axis=0))
        v[i] = scale * e.sum()
    return h, v


def dressing_mean(f: Polynomial, nu: AtomicMeasure, s: float, t: float, params: ModelParams) -> float:
    """E_nu <f, D_t^s> = e^{alpha(s - t)} <P_{t+s} f, nu>."""
    if s < 0 or t < 0:
        raise ValueError(f"times must be non-negative, got s={s}, t={t}")
    pushed = get_semigroup(params).apply(f, t + s)
    return math.exp(params.alpha * (s - t)) * nu.integrate(pushed)
