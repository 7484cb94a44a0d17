"""
Tests for the branching-particle approximation and the generation sweep behind it.
"""

import json
import math
import os
import sys

import numpy as np
import pytest

# Ensure project root is on path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lab.tools.model_core import AtomicMeasure, ModelParams, Polynomial
from lab.tools.moment_engine import Mechanism, MechanismKind, total_mass_laplace
from lab.tools.particle_sim import (
    ParticleSystem,
    discretize,
    discretized_mass,
    evaluate_functionals,
    simulate_superprocess,
    split_probability,
    write_snapshot,
)
from lab.tools.streams import replica_stream
from utils.errors import PopulationCapExceeded

UNIT = ModelParams(sigma=1.0, mu=1.0, alpha=1.0, beta=1.0)


def test_split_probability():
    assert split_probability(Mechanism.super(UNIT), 10) == pytest.approx(0.525)
    assert split_probability(Mechanism.sub(UNIT), 10) == pytest.approx(0.475)


def test_split_probability_requires_resolution():
    params = ModelParams(sigma=1.0, mu=1.0, alpha=1.0, beta=0.5)
    with pytest.raises(ValueError):
        split_probability(Mechanism.super(params), 1)
    assert split_probability(Mechanism.super(params), 2) == pytest.approx(0.75)


def test_discretize_floors_each_atom():
    nu = AtomicMeasure.parse("0.29@0; 0.015@1")
    start = discretize(nu, 100, 1)
    assert start.shape == (30, 1)
    assert np.count_nonzero(start[:, 0] == 0.0) == 29
    assert discretized_mass(nu, 100) == pytest.approx(0.30)
    assert discretize(AtomicMeasure.empty(1), 100, 1).shape == (0, 1)
    assert discretized_mass(AtomicMeasure.empty(1), 100) == 0.0


def test_empty_initial_measure():
    state = simulate_superprocess(AtomicMeasure.empty(1), 2.0, 20, Mechanism.super(UNIT), np.random.default_rng(0))
    assert state.count == 0
    assert not state.survived
    assert evaluate_functionals(state, Polynomial.parse("x")).mass == 0.0


def test_time_zero_returns_the_discretized_start():
    nu = AtomicMeasure.parse("1@0.5; 0.5@-1")
    state = simulate_superprocess(nu, 0.0, 10, Mechanism.super(UNIT), np.random.default_rng(0))
    assert state.count == 15
    assert state.total_mass == pytest.approx(1.5)
    assert sorted(state.positions[:, 0].tolist()) == [-1.0] * 5 + [0.5] * 10


def test_invalid_arguments():
    nu = AtomicMeasure.dirac([0.0])
    with pytest.raises(ValueError):
        simulate_superprocess(nu, -1.0, 10, Mechanism.super(UNIT), np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate_superprocess(nu, 1.0, 0, Mechanism.super(UNIT), np.random.default_rng(0))


def test_same_stream_same_trajectory():
    nu = AtomicMeasure.dirac([0.0])
    a = simulate_superprocess(nu, 1.0, 20, Mechanism.super(UNIT), replica_stream(7, 3), checkpoints=[0.5])
    b = simulate_superprocess(nu, 1.0, 20, Mechanism.super(UNIT), replica_stream(7, 3), checkpoints=[0.5])
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.at(0.5).positions, b.at(0.5).positions)


@pytest.mark.parametrize("kind,sign", [(MechanismKind.SUPER, 1.0), (MechanismKind.SUB, -1.0)])
def test_mean_total_mass(kind, sign):
    """E|X_t| = e^{+-alpha t}|nu| and Var|X_t| follows the continuous-state branching law."""
    nu = AtomicMeasure.dirac([0.0])
    mech = Mechanism(kind, UNIT)
    t = 1.0
    masses = np.array([
        simulate_superprocess(nu, t, 20, mech, replica_stream(2024, i)).total_mass for i in range(400)
    ])
    expected = math.exp(sign * UNIT.alpha * t)
    se = masses.std(ddof=1) / math.sqrt(len(masses))
    assert abs(masses.mean() - expected) < 4 * se


def test_laplace_transform_of_total_mass():
    """E exp(-theta |X_t|) = exp(-|nu| v_theta(t)) for the discretised start."""
    nu = AtomicMeasure.dirac([0.0])
    t = 1.0
    masses = np.array([
        simulate_superprocess(nu, t, 20, Mechanism.super(UNIT), replica_stream(31, i)).total_mass
        for i in range(1500)
    ])
    for theta in (0.5, 1.0, 2.0):
        sample = np.exp(-theta * masses)
        target = math.exp(-total_mass_laplace(theta, t, UNIT))
        se = sample.std(ddof=1) / math.sqrt(len(sample))
        assert abs(sample.mean() - target) < 4 * se, theta


def test_spatial_martingale_mean():
    """H_t = e^{-(alpha - mu) t} <X_t, x> keeps its starting value |nu| x_0 in mean."""
    params = ModelParams(sigma=1.0, mu=1.0, alpha=1.5, beta=1.0)
    nu = AtomicMeasure.dirac([1.0])
    h = np.array([
        evaluate_functionals(
            simulate_superprocess(nu, 1.0, 20, Mechanism.super(params), replica_stream(47, i)),
            Polynomial.parse("x"),
        ).h_value[0]
        for i in range(1500)
    ])
    se = h.std(ddof=1) / math.sqrt(len(h))
    assert abs(h.mean() - 1.0) < 4 * se


def test_checkpoint_view():
    nu = AtomicMeasure.dirac([0.0])
    state = simulate_superprocess(nu, 1.0, 20, Mechanism.super(UNIT), replica_stream(1, 1), checkpoints=[0.25, 0.5])
    early = state.at(0.25)
    assert early.current_time == 0.25
    assert early.resolution == 20
    assert set(state.snapshots) == {0.25, 0.5, 1.0}


def test_evaluate_functionals():
    state = ParticleSystem(
        positions=np.array([[1.0], [2.0], [3.0]]),
        resolution=2,
        current_time=1.0,
        mechanism=MechanismKind.SUPER,
        params=ModelParams(sigma=1.0, mu=1.0, alpha=2.5, beta=1.0),
    )
    out = evaluate_functionals(state, Polynomial.parse("x^2"))
    assert out.mass == 1.5
    assert out.integral_f == pytest.approx(7.0)
    assert out.h_value == pytest.approx(np.array([math.exp(-1.5) * 3.0]))


def test_write_snapshot(tmp_path):
    state = ParticleSystem(
        positions=np.array([[0.5, -1.0], [2.0, 0.0]]),
        resolution=4,
        current_time=0.75,
        mechanism=MechanismKind.SUB,
        params=ModelParams(sigma=1.0, mu=1.0, alpha=1.0, beta=1.0, dim=2),
    )
    path = write_snapshot(state, tmp_path / "out" / "snapshot.csv", seed=9, stream=3)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ["particle_index,x1,x2", "0,0.5,-1.0", "1,2.0,0.0"]
    header = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    assert header == {"t": 0.75, "n": 4, "mech": "sub", "seed": 9, "stream": 3, "count": 2, "mass": 0.5}


def test_population_cap_carries_partial_state():
    nu = AtomicMeasure.parse("20@0")
    with pytest.raises(PopulationCapExceeded) as info:
        simulate_superprocess(nu, 3.0, 5, Mechanism.super(UNIT), replica_stream(5, 0), population_cap=150)
    partial = info.value.partial_state
    assert partial is not None
    assert partial.generations >= 1
    assert set(partial.snapshots) == {3.0}
