"""
Model parameters, polynomial test functions and the invariant Gaussian measure.

Everything downstream (semigroup action, moment recursions, limit variances,
simulators) consumes the three value types defined here:

- ModelParams: the quadruple (sigma, mu, alpha, beta) plus the spatial
  dimension, with regime classification by the sign of alpha - 2 mu.
- Polynomial: a dense multivariate polynomial over R^d. Coefficients live in
  an ndarray indexed by exponent vectors, so products are n-d convolutions
  and evaluation is numpy's polyval{,2d,3d}.
- AtomicMeasure: a weighted point configuration (initial measures, backbone
  starts, particle approximations).

The invariant measure phi of the OU generator is the centred Gaussian with
per-coordinate variance sigma^2 / (2 mu); its moments are closed form.
"""

import math
import re
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import convolve

from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_DEGREE_CAP = 8
MAX_DIM = 3

MultiIndex = Tuple[int, ...]


class Regime(str, Enum):
    SLOW = "slow"
    CRITICAL = "critical"
    FAST = "fast"


class ModelParams(BaseModel):
    """Parameters of the OU superprocess with mechanism psi(l) = -alpha l + beta l^2.

    Critical parameters are produced either by passing ``critical=True`` (alpha
    is then derived as 2 mu from the single input mu) or by giving values with
    alpha == 2 mu exactly; both normalize to ``critical=True`` at construction.
    Regime is read from that flag and never re-derived from a float comparison.
    """

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(gt=0, allow_inf_nan=False)
    mu: float = Field(gt=0, allow_inf_nan=False)
    alpha: float = Field(gt=0, allow_inf_nan=False)
    beta: float = Field(gt=0, allow_inf_nan=False)
    dim: int = Field(default=1, ge=1, le=MAX_DIM)
    critical: bool = False

    @model_validator(mode="before")
    @classmethod
    def _normalize_critical(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        mu = data.get("mu")
        if mu is None:
            return data
        if data.get("critical"):
            alpha = data.get("alpha")
            if alpha is not None and float(alpha) != 2.0 * float(mu):
                raise ValueError(
                    f"critical parameters require alpha = 2*mu, got alpha={alpha}, mu={mu}"
                )
            data["alpha"] = 2.0 * float(mu)
        elif data.get("alpha") is not None and float(data["alpha"]) == 2.0 * float(mu):
            data["critical"] = True
        return data

    @classmethod
    def critical_from(cls, sigma: float, mu: float, beta: float, dim: int = 1) -> "ModelParams":
        return cls(sigma=sigma, mu=mu, beta=beta, dim=dim, critical=True)

    @property
    def lambda_star(self) -> float:
        """alpha / beta: the largest root of psi, intensity of the backbone."""
        return self.alpha / self.beta

    @property
    def stationary_variance(self) -> float:
        """Per-coordinate variance sigma^2 / (2 mu) of the invariant measure phi."""
        return self.sigma ** 2 / (2.0 * self.mu)

    def regime(self) -> Regime:
        if self.critical:
            return Regime.CRITICAL
        return Regime.SLOW if self.alpha < 2.0 * self.mu else Regime.FAST


# -----------------------------
# Polynomials
# -----------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<var>x\d*)|(?P<op>[-+*^]))"
)


def _trim(arr: np.ndarray) -> np.ndarray:
    """Drop trailing all-zero slabs along every axis (keeping size >= 1)."""
    for axis in range(arr.ndim):
        size = arr.shape[axis]
        while size > 1:
            last = np.take(arr, size - 1, axis=axis)
            if np.any(last != 0.0):
                break
            size -= 1
        if size != arr.shape[axis]:
            arr = np.take(arr, np.arange(size), axis=axis)
    return arr


class Polynomial:
    """Immutable dense polynomial in x1..xd.

    ``coeffs[a1, ..., ad]`` is the coefficient of x1^a1 ... xd^ad. Zero
    coefficients are implicit; ``terms`` exposes only the non-zero ones.
    """

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs, dim: Optional[int] = None):
        arr = np.array(coeffs, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape((1,) * (dim or 1))
        if dim is not None and arr.ndim != dim:
            raise ValueError(f"coefficient array has {arr.ndim} axes, expected dim={dim}")
        if arr.ndim > MAX_DIM:
            raise ValueError(f"dimension {arr.ndim} exceeds the supported maximum {MAX_DIM}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("polynomial coefficients must be finite")
        arr = _trim(arr + 0.0)  # +0.0 folds -0.0 into 0.0
        arr.setflags(write=False)
        self._coeffs = arr

    # construction helpers
    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(np.zeros((1,) * dim))

    @classmethod
    def constant(cls, dim: int, value: float) -> "Polynomial":
        return cls(np.full((1,) * dim, float(value)))

    @classmethod
    def coordinate(cls, dim: int, j: int) -> "Polynomial":
        """The coordinate function x_{j+1} (0-based j)."""
        index = [0] * dim
        index[j] = 1
        return cls.from_terms(dim, {tuple(index): 1.0})

    @classmethod
    def from_terms(cls, dim: int, terms: Dict[MultiIndex, float]) -> "Polynomial":
        if not terms:
            return cls.zero(dim)
        for index in terms:
            if len(index) != dim or any(a < 0 for a in index):
                raise ValueError(f"invalid multi-index {index} for dim={dim}")
        shape = tuple(max(index[axis] for index in terms) + 1 for axis in range(dim))
        arr = np.zeros(shape)
        for index, c in terms.items():
            arr[index] += float(c)
        return cls(arr)

    # basic properties
    @property
    def dim(self) -> int:
        return self._coeffs.ndim

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def terms(self) -> Dict[MultiIndex, float]:
        nz = np.nonzero(self._coeffs)
        return {tuple(int(a) for a in idx): float(self._coeffs[idx]) for idx in zip(*nz)}

    @property
    def degree(self) -> int:
        terms = self.terms
        return max((sum(index) for index in terms), default=0)

    def is_zero(self) -> bool:
        return not np.any(self._coeffs)

    def check_degree(self, cap: int = DEFAULT_DEGREE_CAP) -> "Polynomial":
        if self.degree > cap:
            raise ValueError(f"polynomial degree {self.degree} exceeds the cap {cap}")
        return self

    # algebra
    def _padded(self, shape: Sequence[int]) -> np.ndarray:
        pad = [(0, s - n) for s, n in zip(shape, self._coeffs.shape)]
        return np.pad(self._coeffs, pad)

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.dim, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        shape = tuple(max(a, b) for a, b in zip(self._coeffs.shape, other._coeffs.shape))
        return Polynomial(self._padded(shape) + other._padded(shape))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self._coeffs)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self._coeffs * float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return Polynomial(convolve(self._coeffs, other._coeffs, mode="full", method="direct"))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Polynomial(self._coeffs / float(scalar))

    def __pow__(self, power: int):
        if power < 0:
            raise ValueError("negative powers are not polynomials")
        result = Polynomial.constant(self.dim, 1.0)
        for _ in range(power):
            result = result * self
        return result

    def abs(self) -> "Polynomial":
        """Coefficientwise absolute value (used to carry error bounds)."""
        return Polynomial(np.abs(self._coeffs))

    def derivative(self, j: int) -> "Polynomial":
        if self._coeffs.shape[j] == 1:
            return Polynomial.zero(self.dim)
        return Polynomial(npoly.polyder(self._coeffs, axis=j))

    def max_abs_coeff(self) -> float:
        return float(np.max(np.abs(self._coeffs)))

    # evaluation
    def evaluate(self, points) -> np.ndarray:
        """Evaluate at an (N, d) array of points; returns shape (N,)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        c = self._coeffs
        if self.dim == 1:
            return npoly.polyval(pts[:, 0], c)
        if self.dim == 2:
            return npoly.polyval2d(pts[:, 0], pts[:, 1], c)
        return npoly.polyval3d(pts[:, 0], pts[:, 1], pts[:, 2], c)

    def __call__(self, x) -> float:
        return float(self.evaluate(np.atleast_1d(np.asarray(x, dtype=float)))[0])

    # comparison
    def allclose(self, other: "Polynomial", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        shape = tuple(max(a, b) for a, b in zip(self._coeffs.shape, other._coeffs.shape))
        return bool(np.allclose(self._padded(shape), other._padded(shape), rtol=rtol, atol=atol))

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._coeffs.shape == other._coeffs.shape and bool(np.all(self._coeffs == other._coeffs))

    def __hash__(self):
        return hash((self._coeffs.shape, self._coeffs.tobytes()))

    # text format
    def format(self) -> str:
        """Render as ``c * x1^a1 x2^a2 ...`` terms; coefficients use repr() so
        ``Polynomial.parse`` recovers them bit-exactly."""
        terms = sorted(self.terms.items(), key=lambda item: item[0], reverse=True)
        if not terms:
            return "0"
        parts: List[str] = []
        for i, (index, c) in enumerate(terms):
            monomial = " ".join(
                f"x{axis + 1}" if a == 1 else f"x{axis + 1}^{a}"
                for axis, a in enumerate(index) if a > 0
            )
            magnitude = repr(abs(c))
            body = f"{magnitude} * {monomial}" if monomial else magnitude
            if i == 0:
                parts.append(f"-{body}" if c < 0 else body)
            else:
                parts.append(f"- {body}" if c < 0 else f"+ {body}")
        return " ".join(parts)

    __str__ = format

    def __repr__(self):
        return f"Polynomial({self.format()!r}, dim={self.dim})"

    @classmethod
    def parse(cls, text: str, dim: int = 1, cap: int = DEFAULT_DEGREE_CAP) -> "Polynomial":
        """Parse the text format. ``x`` is an alias of ``x1``; factors may be
        separated by whitespace or ``*``; ``^`` is optional for exponent 1."""
        tokens = []
        pos = 0
        text = text.strip()
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == pos:
                raise ValueError(f"cannot parse polynomial {text!r} near position {pos}")
            kind = m.lastgroup
            tokens.append((kind, m.group(kind)))
            pos = m.end()
        if not tokens:
            raise ValueError("empty polynomial text")

        terms: Dict[MultiIndex, float] = {}
        i = 0
        sign = 1.0
        expect_term = True
        coef, index, seen = 1.0, [0] * dim, False

        def flush():
            if not seen:
                raise ValueError(f"dangling operator in {text!r}")
            key = tuple(index)
            terms[key] = terms.get(key, 0.0) + sign * coef

        while i < len(tokens):
            kind, value = tokens[i]
            if kind == "op" and value in "+-":
                if seen:
                    flush()
                    coef, index, seen = 1.0, [0] * dim, False
                elif not expect_term:
                    raise ValueError(f"unexpected {value!r} in {text!r}")
                sign = -1.0 if value == "-" else 1.0
                expect_term = True
                i += 1
                continue
            if kind == "op" and value == "*":
                if not seen:
                    raise ValueError(f"unexpected '*' in {text!r}")
                i += 1
                continue
            if kind == "num":
                coef *= float(value)
                seen = True
                expect_term = False
                i += 1
                continue
            if kind == "var":
                axis = 0 if value == "x" else int(value[1:]) - 1
                if not 0 <= axis < dim:
                    raise ValueError(f"variable {value} out of range for dim={dim}")
                exponent = 1
                if i + 1 < len(tokens) and tokens[i + 1] == ("op", "^"):
                    if i + 2 >= len(tokens) or tokens[i + 2][0] != "num" or not tokens[i + 2][1].isdigit():
                        raise ValueError(f"exponent must be a non-negative integer in {text!r}")
                    exponent = int(tokens[i + 2][1])
                    i += 2
                index[axis] += exponent
                seen = True
                expect_term = False
                i += 1
                continue
            raise ValueError(f"unexpected token {value!r} in {text!r}")
        flush()
        return cls.from_terms(dim, terms).check_degree(cap)


# -----------------------------
# Gaussian moments of phi
# -----------------------------

def gaussian_moments_1d(variance: float, max_order: int) -> np.ndarray:
    """E G^n for n = 0..max_order, G ~ N(0, variance): odd -> 0, 2m -> (2m-1)!! v^m."""
    moments = np.zeros(max_order + 1)
    moments[0] = 1.0
    for n in range(2, max_order + 1):
        moments[n] = (n - 1) * variance * moments[n - 2]
    return moments


def gaussian_moment(params: ModelParams, k: Sequence[int]) -> float:
    """Integral of x^k against the invariant measure phi."""
    k = tuple(int(a) for a in k)
    if len(k) != params.dim or any(a < 0 for a in k):
        raise ValueError(f"invalid multi-index {k} for dim={params.dim}")
    one_d = gaussian_moments_1d(params.stationary_variance, max(k))
    return float(np.prod([one_d[a] for a in k]))


def integrate_phi(f: Polynomial, params: ModelParams) -> float:
    """<f, phi> by contracting the coefficient array with the 1-d moment vectors."""
    _check_dim(f, params)
    c = f.coeffs
    one_d = gaussian_moments_1d(params.stationary_variance, max(c.shape) - 1)
    result = c
    for _ in range(c.ndim):
        result = np.tensordot(one_d[: result.shape[0]], result, axes=(0, 0))
    return float(result)


def center(f: Polynomial, params: ModelParams) -> Polynomial:
    """f~ = f - <f, phi>."""
    return f - integrate_phi(f, params)


def grad_inner(f: Polynomial, params: ModelParams) -> np.ndarray:
    """Vector of <d_j f, phi>, j = 1..d."""
    _check_dim(f, params)
    return np.array([integrate_phi(f.derivative(j), params) for j in range(f.dim)])


def _check_dim(f: Polynomial, params: ModelParams) -> None:
    if f.dim != params.dim:
        raise ValueError(f"polynomial has dim={f.dim}, parameters have dim={params.dim}")


# -----------------------------
# Atomic measures
# -----------------------------

class AtomicMeasure:
    """Finite weighted point configuration sum_i m_i delta_{x_i} on R^d.

    Immutable; ``with_atom`` returns a new measure. The empty configuration is
    the zero measure.
    """

    __slots__ = ("_positions", "_masses")

    def __init__(self, positions, masses, dim: Optional[int] = None):
        masses = np.array(masses, dtype=float).reshape(-1)
        positions = np.array(positions, dtype=float)
        if positions.size == 0:
            width = dim or (positions.shape[-1] if positions.ndim == 2 else 1)
            positions = positions.reshape(0, width)
        else:
            positions = positions.reshape(len(masses), -1)
        if dim is not None and positions.shape[1] != dim:
            raise ValueError(f"atom positions have dim={positions.shape[1]}, expected {dim}")
        if np.any(~np.isfinite(masses)) or np.any(masses <= 0.0):
            raise ValueError("atom masses must be finite and strictly positive")
        if np.any(~np.isfinite(positions)):
            raise ValueError("atom positions must be finite")
        positions.setflags(write=False)
        masses.setflags(write=False)
        self._positions = positions
        self._masses = masses

    @classmethod
    def empty(cls, dim: int = 1) -> "AtomicMeasure":
        return cls(np.zeros((0, dim)), [], dim=dim)

    @classmethod
    def dirac(cls, x, mass: float = 1.0) -> "AtomicMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.reshape(1, -1), [mass])

    @classmethod
    def from_atoms(cls, atoms: Iterable[Tuple[Sequence[float], float]], dim: int) -> "AtomicMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls.empty(dim)
        positions = np.array([np.atleast_1d(p) for p, _ in atoms], dtype=float)
        return cls(positions, [m for _, m in atoms], dim=dim)

    @classmethod
    def parse(cls, text: str, dim: int = 1) -> "AtomicMeasure":
        """``mass@x1,...,xd`` atoms separated by ``;``; blank text is the zero measure."""
        atoms = []
        for chunk in (text or "").split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                mass_text, pos_text = chunk.split("@")
                position = [float(v) for v in pos_text.split(",")]
                atoms.append((position, float(mass_text)))
            except ValueError as e:
                raise ValueError(f"cannot parse atom {chunk!r}: expected mass@x1,...,xd") from e
        return cls.from_atoms(atoms, dim)

    def format(self) -> str:
        return "; ".join(
            f"{m!r}@" + ",".join(repr(float(v)) for v in x) for x, m in self.atoms
        )

    @property
    def dim(self) -> int:
        return self._positions.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def atoms(self) -> List[Tuple[np.ndarray, float]]:
        return [(self._positions[i], float(self._masses[i])) for i in range(len(self))]

    @property
    def total_mass(self) -> float:
        return math.fsum(self._masses)

    def __len__(self) -> int:
        return len(self._masses)

    def is_empty(self) -> bool:
        return len(self) == 0

    def with_atom(self, x, mass: float) -> "AtomicMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
        return AtomicMeasure(
            np.vstack([self._positions, x]), np.append(self._masses, mass), dim=self.dim
        )

    def integrate(self, f: Polynomial) -> float:
        """<f, nu> = sum_i m_i f(x_i)."""
        if self.is_empty():
            return 0.0
        return float(np.dot(self._masses, f.evaluate(self._positions)))

    def probabilities(self) -> np.ndarray:
        """Atom weights of the normalized measure nu / |nu|."""
        if self.is_empty():
            raise ValueError("the zero measure cannot be normalized")
        return self._masses / self._masses.sum()

    def __repr__(self):
        return f"AtomicMeasure({self.format()!r}, dim={self.dim})"
