"""
Branching-particle approximation of the superprocess.

Each particle carries mass 1/n, moves as an OU diffusion and branches at rate
2 beta n into two children with probability (1 + a/(2 beta n))/2, dying
childless otherwise, where a = alpha for the supercritical mechanism and
a = -alpha for the subcritical one. Then the total mass has drift a m and
quadratic-variation rate 2 beta m, which is the continuous-state branching
limit of the target mechanism.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np

from lab.tools.branching import sweep
from lab.tools.model_core import AtomicMeasure, ModelParams, Polynomial
from lab.tools.moment_engine import Mechanism, MechanismKind
from lab.tools.ou_semigroup import get_semigroup
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class ParticleSystem:
    positions: np.ndarray
    resolution: int
    current_time: float
    mechanism: MechanismKind
    params: ModelParams
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def total_mass(self) -> float:
        return self.count / self.resolution

    @property
    def survived(self) -> bool:
        return self.count > 0

    def at(self, t: float) -> "ParticleSystem":
        """The system as observed at checkpoint ``t``."""
        return ParticleSystem(
            positions=self.snapshots[float(t)],
            resolution=self.resolution,
            current_time=float(t),
            mechanism=self.mechanism,
            params=self.params,
        )


class Functionals(NamedTuple):
    mass: float
    integral_f: float
    h_value: np.ndarray


def split_probability(mech: Mechanism, n: int) -> float:
    """P(two children) at a branching event; requires 2 beta n > alpha."""
    params = mech.params
    event_rate = 2.0 * params.beta * n
    if event_rate <= params.alpha:
        raise ValueError(
            f"resolution n={n} too small: need 2*beta*n > alpha "
            f"(2*{params.beta}*{n} <= {params.alpha})"
        )
    drift = params.alpha if mech.kind == MechanismKind.SUPER else -params.alpha
    return 0.5 * (1.0 + drift / event_rate)


def discretize(nu: AtomicMeasure, n: int, dim: int) -> np.ndarray:
    """floor(n * mass) particles at each atom."""
    if nu.is_empty():
        return np.zeros((0, dim))
    return np.repeat(nu.positions, _counts(nu, n), axis=0)


def discretized_mass(nu: AtomicMeasure, n: int) -> float:
    """Total mass actually started from: sum_i floor(n m_i) / n."""
    if nu.is_empty():
        return 0.0
    return int(_counts(nu, n).sum()) / n


def _counts(nu: AtomicMeasure, n: int) -> np.ndarray:
    # the epsilon keeps n * m from flooring below an integer it equals in exact arithmetic
    return np.floor(n * nu.masses + 1e-9).astype(int)


def simulate_superprocess(
    nu: AtomicMeasure,
    t_end: float,
    n: int,
    mech: Mechanism,
    rng: np.random.Generator,
    checkpoints: Sequence[float] = (),
    population_cap: int = 2_000_000,
) -> ParticleSystem:
    if n < 1:
        raise ValueError(f"resolution must be >= 1, got {n}")
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    params = mech.params
    p_split = split_probability(mech, n)
    start = discretize(nu, n, params.dim)
    result = sweep(
        start,
        t_end,
        2.0 * params.beta * n,
        p_split,
        get_semigroup(params),
        rng,
        checkpoints=checkpoints,
        population_cap=population_cap,
    )
    return ParticleSystem(
        positions=result.at(t_end),
        resolution=n,
        current_time=float(t_end),
        mechanism=mech.kind,
        params=params,
        snapshots=result.snapshots,
    )


def evaluate_functionals(state: ParticleSystem, f: Polynomial) -> Functionals:
    """(|X_t|, <X_t, f>, e^{-(alpha-mu)t} <X_t, id>) as exact sums times 1/n."""
    params = state.params
    if state.count == 0:
        return Functionals(0.0, 0.0, np.zeros(params.dim))
    weight = 1.0 / state.resolution
    integral = math.fsum(f.evaluate(state.positions)) * weight
    h = math.exp(-(params.alpha - params.mu) * state.current_time) * state.positions.sum(axis=0) * weight
    return Functionals(state.total_mass, integral, h)


def write_snapshot(state: ParticleSystem, path, seed: Optional[int] = None, stream: Optional[int] = None) -> Path:
    """CSV of particle positions plus a JSON header next to it (same stem, .json)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = state.params.dim
    header = {
        "t": state.current_time,
        "n": state.resolution,
        "mech": state.mechanism.value,
        "seed": seed,
        "stream": stream,
        "count": state.count,
        "mass": state.total_mass,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["particle_index"] + [f"x{j + 1}" for j in range(dim)]) + "\n")
        for i, row in enumerate(state.positions):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
    return path
