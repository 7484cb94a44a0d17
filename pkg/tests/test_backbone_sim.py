"""
Tests for the backbone simulator, its martingales and the fission event log.
"""

import math
import os
import sys

import numpy as np
import pytest
from scipy import stats

# Ensure project root is on path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lab.tools.backbone_sim import (
    BackboneEngine,
    BackboneEvent,
    backbone_martingales,
    format_label,
    parse_label,
    poisson_initial,
    read_event_log,
    replay_events,
    simulate_backbone,
    write_event_log,
)
from lab.tools.model_core import AtomicMeasure, ModelParams
from lab.tools.statistics import variance_and_se
from lab.tools.streams import StreamPurpose, replica_stream
from utils.errors import PopulationCapExceeded

UNIT = ModelParams(sigma=1.0, mu=1.0, alpha=1.0, beta=1.0)
SLOW = ModelParams(sigma=1.0, mu=1.0, alpha=1.0, beta=0.5)


def test_poisson_initial_count():
    nu = AtomicMeasure.parse("0.5@0; 1@2")
    counts = np.array([
        len(poisson_initial(nu, replica_stream(3, i, StreamPurpose.INITIAL), SLOW)) for i in range(2000)
    ])
    expected = SLOW.lambda_star * nu.total_mass
    assert abs(counts.mean() - expected) < 4 * math.sqrt(expected / len(counts))


def test_poisson_initial_atoms():
    nu = AtomicMeasure.parse("0.5@0; 1@2")
    gamma = poisson_initial(nu, np.random.default_rng(4), SLOW)
    assert set(gamma.positions[:, 0].tolist()) <= {0.0, 2.0}
    assert np.all(gamma.masses == 1.0)
    assert poisson_initial(AtomicMeasure.empty(1), np.random.default_rng(4), SLOW).is_empty()


def test_events_engine_genealogy():
    gamma = AtomicMeasure.from_atoms([([0.0], 1.0), ([1.0], 1.0)], dim=1)
    state = simulate_backbone(gamma, 1.5, np.random.default_rng(8), UNIT, checkpoints=[0.5])
    assert state.size == len(state.labels) == len(gamma) + len(state.events)
    assert all(label[0] in (0, 1) for label in state.labels)
    living = replay_events(gamma, state.events)
    assert set(living) == set(state.labels)
    for label, birth in zip(state.labels, state.birth_times):
        assert living[label][0] == birth
    assert set(state.snapshots) == {0.5, 1.5}


def test_event_times_are_ordered():
    state = simulate_backbone(AtomicMeasure.dirac([0.0]), 2.0, np.random.default_rng(1), UNIT)
    times = [event.time for event in state.events]
    assert times == sorted(times)
    assert all(0.0 < t <= 2.0 for t in times)


def test_event_log_round_trip(tmp_path):
    state = simulate_backbone(AtomicMeasure.dirac([0.5]), 2.0, np.random.default_rng(2), UNIT)
    path = write_event_log(state, tmp_path / "backbone_events.tsv")
    assert read_event_log(path) == state.events


def test_malformed_event_log(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("0.5\t0\t0.0\t1.0\n", encoding="utf-8")
    with pytest.raises(ValueError, match="bad.tsv:1"):
        read_event_log(path)


def test_replay_rejects_unknown_parent():
    event = BackboneEvent(0.3, (4,), ((4, 0), (4, 1)), (0.0,))
    with pytest.raises(ValueError):
        replay_events(AtomicMeasure.dirac([0.0]), [event])


def test_replay_rejects_foreign_children():
    event = BackboneEvent(0.3, (0,), ((0, 0), (1, 1)), (0.0,))
    with pytest.raises(ValueError):
        replay_events(AtomicMeasure.dirac([0.0]), [event])


def test_labels_format_round_trip():
    assert format_label((0, 1, 1)) == "0.1.1"
    assert parse_label("0.1.1") == (0, 1, 1)


@pytest.mark.parametrize("engine", [BackboneEngine.EVENTS, BackboneEngine.GENERATIONS])
def test_martingale_means(engine):
    """E W_t = |gamma| and E I_t = sum of starting positions."""
    gamma = AtomicMeasure.dirac([1.0])
    t = 2.0
    pairs = [
        backbone_martingales(simulate_backbone(gamma, t, replica_stream(11, i), UNIT, engine=engine))
        for i in range(1500)
    ]
    w = np.array([p.W for p in pairs])
    i_values = np.array([p.I[0] for p in pairs])
    assert abs(w.mean() - 1.0) < 4 * w.std(ddof=1) / math.sqrt(len(w))
    assert abs(i_values.mean() - 1.0) < 4 * i_values.std(ddof=1) / math.sqrt(len(i_values))


@pytest.mark.parametrize("engine", [BackboneEngine.EVENTS, BackboneEngine.GENERATIONS])
def test_uniform_particle_follows_the_ou_law(engine):
    """Branching ignores position, so a uniformly picked particle at t has the OU transition law."""
    t = 1.5
    pick = np.random.default_rng(5)
    positions = []
    for i in range(1500):
        state = simulate_backbone(AtomicMeasure.dirac([0.0]), t, replica_stream(19, i), UNIT, engine=engine)
        positions.append(state.positions[pick.integers(state.size), 0])
    variance = UNIT.sigma ** 2 / (2.0 * UNIT.mu) * -math.expm1(-2.0 * UNIT.mu * t)
    result = stats.kstest(np.array(positions) / math.sqrt(variance), "norm")
    assert result.pvalue > 1e-3


def test_size_martingale_variance_stays_bounded():
    """From one particle |Z_t| is geometric, so Var W_t = 1 - e^{-alpha t} < 1 for every t."""
    times = [1.0, 2.0, 4.0]
    states = [
        simulate_backbone(
            AtomicMeasure.dirac([0.0]), times[-1], replica_stream(23, i), UNIT,
            engine=BackboneEngine.GENERATIONS, checkpoints=times,
        )
        for i in range(1500)
    ]
    variances = []
    for t in times:
        w = [backbone_martingales(state, t).W for state in states]
        var, se = variance_and_se(w)
        assert abs(var - (1.0 - math.exp(-UNIT.alpha * t))) < 4 * se, t
        variances.append(var)
    assert max(variances) < 1.25


def test_martingales_at_checkpoint():
    gamma = AtomicMeasure.dirac([0.0])
    state = simulate_backbone(gamma, 1.0, np.random.default_rng(3), UNIT, BackboneEngine.GENERATIONS, checkpoints=[0.5])
    pair = backbone_martingales(state, 0.5)
    assert pair.W == pytest.approx(math.exp(-0.5) * len(state.at(0.5)))
    assert pair.I.shape == (1,)


def test_generations_engine_has_no_genealogy():
    state = simulate_backbone(AtomicMeasure.dirac([0.0]), 1.0, np.random.default_rng(3), UNIT, "generations")
    assert state.engine == BackboneEngine.GENERATIONS
    assert state.labels is None
    assert state.size >= 1


def test_empty_backbone():
    state = simulate_backbone(AtomicMeasure.empty(1), 1.0, np.random.default_rng(0), UNIT)
    assert state.size == 0
    assert backbone_martingales(state).W == 0.0


def test_non_unit_atoms_rejected():
    with pytest.raises(ValueError):
        simulate_backbone(AtomicMeasure.dirac([0.0], mass=2.0), 1.0, np.random.default_rng(0), UNIT)


def test_population_cap():
    with pytest.raises(PopulationCapExceeded) as info:
        simulate_backbone(AtomicMeasure.dirac([0.0]), 12.0, np.random.default_rng(0), UNIT, population_cap=50)
    partial = info.value.partial_state
    assert partial.size == 51
    assert partial.current_time < 12.0
