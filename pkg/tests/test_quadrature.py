"""
Tests for adaptive Gauss-Legendre and Gauss-Hermite quadrature.
"""

import math
import os
import sys

import numpy as np
import pytest

# Ensure project root is on path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lab.tools.model_core import Polynomial
from lab.tools.quadrature import adaptive_gauss_legendre, gauss_hermite_phi, gauss_legendre
from utils.errors import QuadratureError


def test_fixed_rule_is_exact_for_low_degree():
    assert gauss_legendre(lambda s: s ** 7, 0.0, 2.0, order=4) == pytest.approx(2.0 ** 8 / 8, rel=1e-13)


def test_scalar_exponential():
    result = adaptive_gauss_legendre(lambda s: math.exp(3.0 * s), 0.0, 4.0)
    assert result.value == pytest.approx((math.exp(12.0) - 1.0) / 3.0, rel=1e-10)
    assert result.abs_error >= 0.0
    assert result.panels >= 1


def test_polynomial_valued_integrand():
    """int_0^1 e^{-s} (x + s) ds as a polynomial in x."""
    x = Polynomial.parse("x")
    result = adaptive_gauss_legendre(lambda s: (x + s) * math.exp(-s), 0.0, 1.0)
    expected = x * (1.0 - math.exp(-1.0)) + (1.0 - 2.0 * math.exp(-1.0))
    assert result.value.allclose(expected, rtol=1e-10)
    assert isinstance(result.discrepancy, Polynomial)


def test_zero_width_interval():
    result = adaptive_gauss_legendre(lambda s: Polynomial.parse("x + 1") * s, 2.0, 2.0)
    assert result.value.is_zero()
    assert result.abs_error == 0.0
    assert result.panels == 0


def test_reversed_bounds_rejected():
    with pytest.raises(ValueError):
        adaptive_gauss_legendre(lambda s: s, 1.0, 0.0)


def test_non_finite_integrand_raises():
    with pytest.raises(QuadratureError):
        adaptive_gauss_legendre(lambda s: math.inf, 0.0, 1.0)


def test_non_convergence_raises_with_partial_value():
    rough = lambda s: math.sqrt(abs(s - 0.3))  # noqa: E731
    with pytest.raises(QuadratureError) as info:
        adaptive_gauss_legendre(rough, 0.0, 1.0, tol=1e-30, rel_tol=0.0, max_depth=3)
    assert info.value.abs_error > 0.0


def test_initial_panels_do_not_change_value():
    fun = lambda s: math.cos(5.0 * s)  # noqa: E731
    one = adaptive_gauss_legendre(fun, 0.0, 10.0).value
    many = adaptive_gauss_legendre(fun, 0.0, 10.0, panels=7).value
    assert one == pytest.approx(math.sin(50.0) / 5.0, abs=1e-8)
    assert many == pytest.approx(one, abs=1e-8)


def test_gauss_hermite_moments():
    assert gauss_hermite_phi(lambda x: x[:, 0] ** 2, 0.5, 1) == pytest.approx(0.5)
    assert gauss_hermite_phi(lambda x: x[:, 0] ** 4, 0.5, 1) == pytest.approx(0.75)
    assert gauss_hermite_phi(lambda x: (x[:, 0] * x[:, 1]) ** 2, 2.0, 2, order=6) == pytest.approx(4.0)
    assert gauss_hermite_phi(lambda x: np.ones(len(x)), 3.0, 3, order=4) == pytest.approx(1.0)
