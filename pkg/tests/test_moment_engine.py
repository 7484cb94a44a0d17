"""
Tests for the moment recursions, closed forms and samplers of the moment engine.
"""

import math
import os
import sys

import numpy as np
import pytest

# Ensure project root is on path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lab.tools.model_core import AtomicMeasure, ModelParams, Polynomial
from lab.tools.moment_engine import (
    Mechanism,
    MechanismKind,
    MomentEngine,
    backbone_moment,
    cumulant,
    dressing_mean,
    extinction_probability,
    faa_di_bruno_terms,
    get_engine,
    sample_limit_pair,
    sample_v_infinity,
    total_mass_laplace,
    u_moment,
)
from utils.contracts import MomentKind

UNIT = ModelParams(sigma=1.0, mu=1.0, alpha=1.0, beta=1.0)
ONE = Polynomial.constant(1, 1.0)
X = Polynomial.parse("x")


def test_faa_di_bruno_order_three():
    terms = faa_di_bruno_terms(3)
    assert [(t.m, t.coeff) for t in terms] == [((3, 0, 0), 1), ((1, 1, 0), 3), ((0, 0, 1), 1)]


@pytest.mark.parametrize("k,bell", [(1, 1), (2, 2), (4, 15), (6, 203), (8, 4140)])
def test_faa_di_bruno_coefficients_sum_to_bell_numbers(k, bell):
    terms = faa_di_bruno_terms(k)
    assert sum(t.coeff for t in terms) == bell
    assert all(sum(j * mj for j, mj in enumerate(t.m, start=1)) == k for t in terms)


@pytest.mark.parametrize("k", [0, 9, 2.0, True])
def test_faa_di_bruno_rejects_bad_orders(k):
    with pytest.raises(ValueError):
        faa_di_bruno_terms(k)


def test_mechanism_derivatives():
    sup = Mechanism.super(UNIT)
    sub = Mechanism.sub(UNIT)
    assert sup(2.0) == -2.0 + 4.0
    assert sub(2.0) == 2.0 + 4.0
    assert sup.derivative(1) == -1.0
    assert sub.derivative(1, at=-UNIT.lambda_star) == 1.0 - 2.0
    assert sup.derivative(2) == 2.0
    assert sup.derivative(3) == 0.0
    assert sup.semigroup_weight == 1.0


def test_first_moment_closed_form():
    result = u_moment(X, [1.0], 1.0, 1, Mechanism.super(UNIT))
    assert result.value == pytest.approx(1.0, rel=1e-14)
    assert result.abs_error_estimate == 0.0
    assert result.kind == MomentKind.U_SUPER
    assert u_moment(X, [0.0], 1.0, 1, Mechanism.super(UNIT)).value == 0.0


def test_second_moment_of_total_mass_super_and_sub():
    """For f = 1 the recursion reduces to the CSBP variance."""
    engine = get_engine(UNIT)
    t = 1.0
    sup = engine.u_moment(ONE, [0.0], t, 2, MechanismKind.SUPER)
    sub = engine.u_moment(ONE, [0.0], t, 2, MechanismKind.SUB)
    assert sup.value == pytest.approx(-2.0 * math.e * (math.e - 1.0), rel=1e-8)
    assert sub.value == pytest.approx(-2.0 / math.e * (1.0 - 1.0 / math.e), rel=1e-8)
    assert sub.kind == MomentKind.U_SUB


def test_third_moment_of_total_mass():
    t = 1.0
    expected = 12.0 * math.e * ((math.e ** 2 - 1.0) / 2.0 - (math.e - 1.0))
    result = get_engine(UNIT).u_moment(ONE, [0.0], t, 3)
    assert result.value == pytest.approx(expected, rel=1e-7)
    assert result.abs_error_estimate <= 1e-6


def test_variance_of_linear_functional():
    """Var<x, X_1> from delta_0 with alpha = mu = beta = 1 is e + 1/e - 2."""
    value, error = cumulant(X, AtomicMeasure.dirac([0.0]), 1.0, 2, UNIT)
    assert value == pytest.approx(math.e + 1.0 / math.e - 2.0, rel=1e-8)
    assert 0.0 <= error <= 1e-6


def test_cumulant_of_empty_measure():
    assert cumulant(X, AtomicMeasure.empty(1), 1.0, 3, UNIT) == (0.0, 0.0)


def test_cumulant_is_linear_in_the_measure():
    nu = AtomicMeasure.parse("0.5@0; 2@1")
    first, _ = cumulant(X, nu, 0.5, 1, UNIT)
    assert first == pytest.approx(2.0 * math.exp(0.5) * math.exp(-0.5), rel=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("f_text", ["x", "x^2 - 0.5"])
def test_backbone_moment_identity(k, f_text):
    f = Polynomial.parse(f_text)
    engine = get_engine(UNIT)
    for x in (0.0, 1.0):
        for t in (0.5, 1.0):
            u = engine.u_moment(f, [x], t, k, MechanismKind.SUPER)
            u_sub = engine.u_moment(f, [x], t, k, MechanismKind.SUB)
            v = engine.backbone_moment(f, [x], t, k)
            gap = abs(u.value - (u_sub.value - UNIT.lambda_star * v.value))
            allowed = u.abs_error_estimate + u_sub.abs_error_estimate + UNIT.lambda_star * v.abs_error_estimate
            assert gap <= allowed + 1e-10 * max(1.0, abs(u.value))


def test_second_moments_are_non_positive():
    engine = get_engine(UNIT)
    for kind in (MechanismKind.SUPER, MechanismKind.SUB):
        for x in (0.0, 1.0, -2.0):
            assert engine.u_moment(Polynomial.parse("x^2 + x"), [x], 0.8, 2, kind).value <= 0.0


def test_mean_martingale():
    for t in (0.5, 2.0, 5.0):
        value = get_engine(UNIT).u_moment(ONE, [0.0], t, 1).value
        assert math.exp(-UNIT.alpha * t) * value == pytest.approx(1.0, rel=1e-12)


def test_backbone_first_moment():
    t = 0.7
    result = backbone_moment(X, [1.0], t, 1, UNIT)
    expected = -2.0 * math.sinh(t) * math.exp(-t)
    assert result.value == pytest.approx(expected, rel=1e-13)
    assert result.kind == MomentKind.V_BACKBONE


def test_quadrature_refinement_within_error_estimate():
    coarse = MomentEngine(UNIT)
    fine = MomentEngine(UNIT, panels=2)
    f = Polynomial.parse("x^2 - 0.5")
    for k in (2, 3):
        a = coarse.u_moment(f, [1.0], 2.0, k)
        b = fine.u_moment(f, [1.0], 2.0, k)
        assert abs(a.value - b.value) <= a.abs_error_estimate + b.abs_error_estimate + 1e-12


@pytest.mark.parametrize("k,t,x", [(5, 1.0, [0.0]), (0, 1.0, [0.0]), (2, -1.0, [0.0]), (2, math.nan, [0.0]),
                                   (2, 1.0, [0.0, 1.0])])
def test_invalid_moment_requests(k, t, x):
    with pytest.raises(ValueError):
        get_engine(UNIT).u_moment(X, x, t, k)


def test_engine_rejects_foreign_mechanism():
    other = ModelParams(sigma=1.0, mu=1.0, alpha=2.5, beta=1.0)
    with pytest.raises(ValueError):
        get_engine(UNIT).u_moment(X, [0.0], 1.0, 2, Mechanism.super(other))


def test_total_mass_laplace_closed_form():
    assert total_mass_laplace(0.0, 3.0, UNIT) == 0.0
    assert total_mass_laplace(0.7, 0.0, UNIT) == pytest.approx(0.7)
    assert total_mass_laplace(UNIT.lambda_star, 5.0, UNIT) == pytest.approx(UNIT.lambda_star)
    assert total_mass_laplace(2.0, 1.0, UNIT) == pytest.approx(2.0 / (2.0 - math.exp(-1.0)))
    assert total_mass_laplace(0.3, 800.0, UNIT) == pytest.approx(UNIT.lambda_star)
    with pytest.raises(ValueError):
        total_mass_laplace(-1.0, 1.0, UNIT)


def test_extinction_probability():
    assert extinction_probability(1.0, UNIT) == pytest.approx(math.exp(-1.0))
    assert extinction_probability(0.0, UNIT) == 1.0
    with pytest.raises(ValueError):
        extinction_probability(-0.1, UNIT)


def test_v_infinity_sampler_moments():
    rng = np.random.default_rng(11)
    draws = sample_v_infinity(1.5, rng, UNIT, size=100_000)
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - 1.5) < 4 * se
    p0 = math.exp(-1.5 * UNIT.lambda_star)
    zero_se = math.sqrt(p0 * (1 - p0) / len(draws))
    assert abs(np.mean(draws == 0.0) - p0) < 4 * zero_se


def test_v_infinity_sampler_at_finite_horizon():
    rng = np.random.default_rng(12)
    t = 0.5
    draws = sample_v_infinity(1.0, rng, UNIT, size=100_000, t=t)
    p0 = math.exp(-UNIT.lambda_star / (1.0 - math.exp(-t)))
    zero_se = math.sqrt(p0 * (1 - p0) / len(draws))
    assert abs(np.mean(draws == 0.0) - p0) < 4 * zero_se
    assert abs(draws.mean() - 1.0) < 4 * draws.std() / math.sqrt(len(draws))


def test_v_infinity_sampler_edge_cases():
    rng = np.random.default_rng(0)
    assert sample_v_infinity(0.0, rng, UNIT) == 0.0
    assert isinstance(sample_v_infinity(1.0, rng, UNIT), float)
    assert np.all(sample_v_infinity(0.0, rng, UNIT, size=10) == 0.0)
    with pytest.raises(ValueError):
        sample_v_infinity(-1.0, rng, UNIT)


def test_limit_pair_sampler():
    rng = np.random.default_rng(5)
    nu = AtomicMeasure.parse("1@2")
    j_draws = np.zeros((10, 1))
    h, v = sample_limit_pair(nu, j_draws, rng, UNIT, 20_000)
    assert h.shape == (20_000, 1)
    # with J = 0 and every atom at 2, H is exactly 2 V
    assert np.allclose(h[:, 0], 2.0 * v)
    assert abs(v.mean() - 1.0) < 4 * v.std() / math.sqrt(len(v))


def test_limit_pair_sampler_edge_cases():
    rng = np.random.default_rng(5)
    h, v = sample_limit_pair(AtomicMeasure.empty(1), np.zeros((0, 1)), rng, UNIT, 5)
    assert not h.any() and not v.any()
    with pytest.raises(ValueError):
        sample_limit_pair(AtomicMeasure.dirac([0.0]), np.zeros((0, 1)), rng, UNIT, 5)


def test_dressing_mean_examples():
    nu = AtomicMeasure.parse("2@1.5")
    assert dressing_mean(ONE, nu, 0.3, 1.1, UNIT) == pytest.approx(2.0 * math.exp(0.3 - 1.1))
    assert dressing_mean(X, nu, 0.0, 0.0, UNIT) == pytest.approx(3.0)
    expected = math.exp(0.4 - 0.9) * math.exp(-(0.9 + 0.4)) * 2.0 * 1.5
    assert dressing_mean(X, nu, 0.4, 0.9, UNIT) == pytest.approx(expected)
    with pytest.raises(ValueError):
        dressing_mean(X, nu, -0.1, 1.0, UNIT)


def test_dressing_plus_subcritical_mean_matches_superprocess_mean():
    """e^{alpha t} P_t f = e^{-alpha t} P_t f + (mean mass immigrated along the backbone)."""
    t = 1.2
    nu = AtomicMeasure.dirac([0.5])
    total = cumulant(X, nu, t, 1, UNIT)[0]
    sub = get_engine(UNIT).u_moment(X, [0.5], t, 1, MechanismKind.SUB).value
    backbone = -UNIT.lambda_star * backbone_moment(X, [0.5], t, 1, UNIT).value
    assert total == pytest.approx(sub + backbone, rel=1e-12)
