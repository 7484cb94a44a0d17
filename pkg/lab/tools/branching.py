"""
Generation sweep for branching Ornstein-Uhlenbeck particle systems.

Lifetimes are exponential, so a particle's clock can be drawn at birth and a
whole generation processed at once: every particle of the generation is
moved through the observation times that fall inside its life, then to its
death time, where it leaves 0 or 2 children born at its death position.
Positions are advanced only by exact OU transitions, so the sweep is exact in
law; it just visits events grouped by generation instead of by time.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from lab.tools.ou_semigroup import SemigroupAction
from utils.errors import PopulationCapExceeded
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class SweepResult:
    """Positions of the particles alive at each observation time."""
    snapshots: Dict[float, np.ndarray]
    branch_events: int = 0
    death_events: int = 0
    generations: int = 0
    peak_population: int = 0
    observed: List[float] = field(default_factory=list)

    def at(self, t: float) -> np.ndarray:
        return self.snapshots[float(t)]


def sweep(
    positions: np.ndarray,
    t_end: float,
    rate: float,
    split_probability: float,
    semigroup: SemigroupAction,
    rng: np.random.Generator,
    checkpoints: Sequence[float] = (),
    population_cap: int = 2_000_000,
) -> SweepResult:
    """Run the branching system from ``positions`` (all born at time 0) to ``t_end``.

    Each particle lives Exp(rate) and splits in two with ``split_probability``,
    otherwise dies childless. Observation times are ``checkpoints`` plus
    ``t_end``. Raises PopulationCapExceeded once a generation or the live
    population passes ``population_cap``; the exception carries what was
    observed so far.
    """
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    if rate <= 0:
        raise ValueError(f"branching rate must be positive, got {rate}")
    dim = semigroup.params.dim
    times = sorted({float(t) for t in checkpoints if 0.0 <= t <= t_end} | {float(t_end)})
    collected: Dict[float, List[np.ndarray]] = {t: [] for t in times}
    alive_at: Dict[float, int] = {t: 0 for t in times}

    pos = np.asarray(positions, dtype=float).reshape(-1, dim).copy()
    birth = np.zeros(len(pos))
    result = SweepResult(snapshots={}, observed=times)

    def partial() -> SweepResult:
        result.snapshots = {t: _stack(collected[t], dim) for t in times}
        return result

    while len(pos):
        result.generations += 1
        result.peak_population = max(result.peak_population, len(pos))
        death = birth + rng.exponential(1.0 / rate, size=len(pos))
        last = birth.copy()
        for t in times:
            mask = (birth <= t) & (death > t)
            if not mask.any():
                continue
            pos[mask] = semigroup.sample_transition(pos[mask], t - last[mask], rng)
            last[mask] = t
            collected[t].append(pos[mask].copy())
            alive_at[t] += int(mask.sum())
            if alive_at[t] > population_cap:
                raise PopulationCapExceeded(
                    f"population {alive_at[t]} at t={t:g} exceeds cap {population_cap}", partial()
                )

        dying = death <= t_end
        if not dying.any():
            break
        at_death = semigroup.sample_transition(pos[dying], death[dying] - last[dying], rng)
        splits = rng.random(len(at_death)) < split_probability
        result.branch_events += int(splits.sum())
        result.death_events += int((~splits).sum())
        parents = at_death[splits]
        pos = np.repeat(parents, 2, axis=0)
        birth = np.repeat(death[dying][splits], 2)
        if len(pos) > population_cap:
            raise PopulationCapExceeded(
                f"generation of {len(pos)} particles exceeds cap {population_cap}", partial()
            )

    logger.debug(
        f"sweep to t={t_end:g}: {result.generations} generations, "
        f"{result.branch_events} splits, {result.death_events} deaths"
    )
    return partial()


def _stack(chunks: List[np.ndarray], dim: int) -> np.ndarray:
    if not chunks:
        return np.zeros((0, dim))
    return np.vstack(chunks)
