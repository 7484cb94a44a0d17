"""
Exact action of the Ornstein-Uhlenbeck semigroup on polynomials.

P_t f(x) = E f(x e^{-mu t} + G_t) with G_t centred Gaussian of per-coordinate
variance v(t) = (sigma^2 / 2 mu)(1 - e^{-2 mu t}). On monomials this is a
triangular linear map per coordinate,

    x^k  ->  sum_{j<=k} C(k, j) e^{-mu t j} E[G_t^{k-j}] x^j,

so the action on a dense coefficient array is one matrix product per axis.
The weighted semigroup P_t^a = e^{a t} P_t only rescales.

The same Gaussian transition is sampled by ``sample_transition`` for the
particle simulators.
"""

import math
import threading
from typing import Dict, Tuple

import numpy as np
from scipy.special import comb

from lab.tools.model_core import ModelParams, Polynomial, center, grad_inner, gaussian_moments_1d
from utils.logger import get_logger

logger = get_logger(__name__)

_CACHE_LIMIT = 200_000


class SemigroupAction:
    """Semigroup P_t for one parameter set, with cached per-t transition matrices.

    Reads are lock-free; inserts take an exclusive lock, so one instance can be
    shared by concurrent callers.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self._matrices: Dict[Tuple[float, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def bridge_variance(self, t) -> np.ndarray:
        """v(t) = (sigma^2 / 2 mu)(1 - e^{-2 mu t}); 0 at t = 0, increasing to sigma^2 / 2 mu."""
        return self.params.stationary_variance * -np.expm1(-2.0 * self.params.mu * np.asarray(t, dtype=float))

    def transition_matrix(self, t: float, size: int) -> np.ndarray:
        """size x size matrix M with new_coeffs = M @ old_coeffs along one axis."""
        key = (float(t), int(size))
        matrix = self._matrices.get(key)
        if matrix is not None:
            return matrix
        moments = gaussian_moments_1d(float(self.bridge_variance(t)), size - 1)
        decay = np.exp(-self.params.mu * t * np.arange(size))
        j, k = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        binom = comb(k, j)  # zero where j > k
        gap = np.clip(k - j, 0, size - 1)
        matrix = binom * decay[:, None] * moments[gap]
        matrix.setflags(write=False)
        with self._lock:
            if len(self._matrices) >= _CACHE_LIMIT:
                self._matrices.clear()
            self._matrices[key] = matrix
        return matrix

    def apply(self, f: Polynomial, t: float, weight: float = 0.0) -> Polynomial:
        """e^{weight t} P_t f, exact up to floating rounding; never raises the degree."""
        if t < 0:
            raise ValueError(f"semigroup time must be non-negative, got t={t}")
        if f.dim != self.params.dim:
            raise ValueError(f"polynomial has dim={f.dim}, parameters have dim={self.params.dim}")
        coeffs = f.coeffs
        if t > 0:
            for axis in range(coeffs.ndim):
                matrix = self.transition_matrix(t, coeffs.shape[axis])
                coeffs = np.moveaxis(np.tensordot(matrix, coeffs, axes=(1, axis)), 0, axis)
        if weight != 0.0:
            coeffs = coeffs * math.exp(weight * t)
        return Polynomial(coeffs)

    def gradient_profile_error(self, f: Polynomial, x, t: float) -> float:
        """|e^{mu t} P_t f~(x) - x . <grad f, phi>|; decays like e^{-mu t}."""
        if t <= 0:
            raise ValueError(f"gradient profile needs t > 0, got t={t}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        profile = math.exp(self.params.mu * t) * self.apply(center(f, self.params), t)(x)
        return abs(profile - float(np.dot(x, grad_inner(f, self.params))))

    def sample_transition(self, positions: np.ndarray, dt, rng: np.random.Generator) -> np.ndarray:
        """Exact OU draw after elapsed time dt (scalar or one value per row)."""
        positions = np.asarray(positions, dtype=float)
        if positions.size == 0:
            return positions.copy()
        dt = np.asarray(dt, dtype=float)
        if dt.ndim == 1:
            dt = dt[:, None]
        mean = positions * np.exp(-self.params.mu * dt)
        scale = np.sqrt(self.bridge_variance(dt))
        return mean + scale * rng.standard_normal(positions.shape)


_semigroups: Dict[ModelParams, SemigroupAction] = {}
_semigroups_lock = threading.Lock()


def get_semigroup(params: ModelParams) -> SemigroupAction:
    """Shared SemigroupAction per parameter set."""
    action = _semigroups.get(params)
    if action is None:
        with _semigroups_lock:
            action = _semigroups.setdefault(params, SemigroupAction(params))
    return action
