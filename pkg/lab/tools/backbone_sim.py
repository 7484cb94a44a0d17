"""
Backbone simulation: binary-branching OU particles at rate alpha.

Two exact engines:
- ``events``: a heap of absolute death times with Ulam-Harris labels and an
  event log that can be written, read back and replayed.
- ``generations``: the vectorized generation sweep shared with the particle
  simulator; no genealogy, used for suite-scale replica counts.
"""

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from lab.tools.branching import sweep
from lab.tools.model_core import AtomicMeasure, ModelParams
from lab.tools.ou_semigroup import get_semigroup
from utils.errors import PopulationCapExceeded
from utils.logger import get_logger

logger = get_logger(__name__)

Label = Tuple[int, ...]


class BackboneEngine(str, Enum):
    EVENTS = "events"
    GENERATIONS = "generations"


class BackboneEvent(NamedTuple):
    time: float
    parent: Label
    children: Tuple[Label, Label]
    position: Tuple[float, ...]


class MartingalePair(NamedTuple):
    W: float
    I: np.ndarray


@dataclass
class BackboneState:
    """Particles alive at ``current_time``.

    ``labels`` and the birth arrays are filled by the events engine only.
    ``snapshots`` maps each observation time to the positions alive then.
    """
    positions: np.ndarray
    current_time: float
    params: ModelParams
    labels: Optional[List[Label]] = None
    birth_times: Optional[np.ndarray] = None
    birth_positions: Optional[np.ndarray] = None
    events: List[BackboneEvent] = field(default_factory=list)
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)
    engine: BackboneEngine = BackboneEngine.EVENTS

    @property
    def size(self) -> int:
        return len(self.positions)

    def at(self, t: float) -> np.ndarray:
        return self.snapshots[float(t)]


def _check_gamma(gamma: AtomicMeasure, params: ModelParams) -> None:
    if not gamma.is_empty():
        if gamma.dim != params.dim:
            raise ValueError(f"initial configuration has dim={gamma.dim}, parameters have dim={params.dim}")
        if np.any(gamma.masses != 1.0):
            raise ValueError("backbone initial atoms must all have mass 1")


def poisson_initial(nu: AtomicMeasure, rng: np.random.Generator, params: ModelParams) -> AtomicMeasure:
    """Poisson(l* |nu|) unit atoms placed independently according to nu / |nu|."""
    if nu.is_empty():
        return AtomicMeasure.empty(params.dim)
    count = int(rng.poisson(params.lambda_star * nu.total_mass))
    if count == 0:
        return AtomicMeasure.empty(params.dim)
    picks = rng.choice(len(nu), size=count, p=nu.probabilities())
    return AtomicMeasure(nu.positions[picks], np.ones(count), dim=params.dim)


def simulate_backbone(
    gamma: AtomicMeasure,
    t_end: float,
    rng: np.random.Generator,
    params: ModelParams,
    engine: BackboneEngine = BackboneEngine.EVENTS,
    checkpoints: Sequence[float] = (),
    population_cap: int = 2_000_000,
    record_events: bool = True,
) -> BackboneState:
    """Evolve the backbone from the unit-atom configuration ``gamma`` up to ``t_end``."""
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    _check_gamma(gamma, params)
    engine = BackboneEngine(engine)
    if engine == BackboneEngine.GENERATIONS:
        result = sweep(
            gamma.positions if not gamma.is_empty() else np.zeros((0, params.dim)),
            t_end,
            params.alpha,
            1.0,
            get_semigroup(params),
            rng,
            checkpoints=checkpoints,
            population_cap=population_cap,
        )
        return BackboneState(
            positions=result.at(t_end),
            current_time=float(t_end),
            params=params,
            snapshots=result.snapshots,
            engine=engine,
        )
    return _simulate_events(gamma, float(t_end), rng, params, checkpoints, population_cap, record_events)


def _simulate_events(
    gamma: AtomicMeasure,
    t_end: float,
    rng: np.random.Generator,
    params: ModelParams,
    checkpoints: Sequence[float],
    population_cap: int,
    record_events: bool,
) -> BackboneState:
    semigroup = get_semigroup(params)
    lifetime = 1.0 / params.alpha
    # label -> [position, time of position, birth time, birth position]
    alive: Dict[Label, list] = {}
    queue: List[Tuple[float, Label]] = []
    events: List[BackboneEvent] = []
    snapshots: Dict[float, np.ndarray] = {}

    def born(label: Label, position: np.ndarray, t: float) -> None:
        alive[label] = [position, t, t, position]
        heapq.heappush(queue, (t + rng.exponential(lifetime), label))

    def advance_all(t: float) -> np.ndarray:
        ordered = sorted(alive)
        if not ordered:
            return np.zeros((0, params.dim))
        pos = np.array([alive[label][0] for label in ordered])
        dt = np.array([t - alive[label][1] for label in ordered])
        moved = semigroup.sample_transition(pos, dt, rng)
        for label, p in zip(ordered, moved):
            alive[label][0] = p
            alive[label][1] = t
        return moved

    for i, (x, _) in enumerate(gamma.atoms):
        born((i,), np.array(x, dtype=float), 0.0)

    pending = sorted({float(t) for t in checkpoints if 0.0 <= t < t_end})
    while queue and queue[0][0] <= t_end:
        when, label = heapq.heappop(queue)
        while pending and pending[0] < when:
            snapshots[pending[0]] = advance_all(pending.pop(0))
        position, since = alive.pop(label)[:2]
        position = semigroup.sample_transition(position[None, :], when - since, rng)[0]
        children = (label + (0,), label + (1,))
        for child in children:
            born(child, position, when)
        if record_events:
            events.append(BackboneEvent(when, label, children, tuple(float(v) for v in position)))
        if len(alive) > population_cap:
            raise PopulationCapExceeded(
                f"backbone population {len(alive)} exceeds cap {population_cap} at t={when:g}",
                _freeze(alive, when, params, events, snapshots),
            )
    for t in pending:
        snapshots[t] = advance_all(t)
    snapshots[t_end] = advance_all(t_end)
    logger.debug(f"backbone to t={t_end:g}: {len(events)} fissions, {len(alive)} alive")
    return _freeze(alive, t_end, params, events, snapshots)


def _freeze(alive, t, params, events, snapshots) -> BackboneState:
    ordered = sorted(alive)
    dim = params.dim

    def stack(column: int) -> np.ndarray:
        if not ordered:
            return np.zeros((0, dim))
        return np.array([alive[label][column] for label in ordered], dtype=float).reshape(-1, dim)

    return BackboneState(
        positions=stack(0),
        current_time=float(t),
        params=params,
        labels=ordered,
        birth_times=np.array([alive[label][2] for label in ordered], dtype=float),
        birth_positions=stack(3),
        events=list(events),
        snapshots=dict(snapshots),
        engine=BackboneEngine.EVENTS,
    )


def backbone_martingales(state: BackboneState, t: Optional[float] = None) -> MartingalePair:
    """(W_t, I_t) = (e^{-alpha t}|z_t|, e^{-(alpha-mu) t} sum_i z_t(i)) at ``t`` (default: current time)."""
    params = state.params
    if t is None:
        t, positions = state.current_time, state.positions
    else:
        positions = state.at(t)
    w = math.exp(-params.alpha * t) * len(positions)
    i = math.exp(-(params.alpha - params.mu) * t) * positions.sum(axis=0)
    return MartingalePair(w, np.asarray(i, dtype=float).reshape(params.dim))


# -----------------------------
# Event log
# -----------------------------

def format_label(label: Label) -> str:
    return ".".join(str(i) for i in label)


def parse_label(text: str) -> Label:
    return tuple(int(i) for i in text.split("."))


def write_event_log(state: BackboneState, path) -> Path:
    """One tab-separated line per fission: time, parent, two children, position."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for event in state.events:
            fh.write(
                "\t".join([
                    repr(event.time),
                    format_label(event.parent),
                    ",".join(format_label(c) for c in event.children),
                    ",".join(repr(v) for v in event.position),
                ])
                + "\n"
            )
    return path


def read_event_log(path) -> List[BackboneEvent]:
    events = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                time_text, parent_text, children_text, position_text = line.split("\t")
                children = tuple(parse_label(c) for c in children_text.split(","))
                if len(children) != 2:
                    raise ValueError("expected two children")
                events.append(BackboneEvent(
                    float(time_text),
                    parse_label(parent_text),
                    children,
                    tuple(float(v) for v in position_text.split(",")),
                ))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: malformed event record: {e}") from e
    return events


def replay_events(gamma: AtomicMeasure, events: Sequence[BackboneEvent]) -> Dict[Label, Tuple[float, Tuple[float, ...]]]:
    """Rebuild the living genealogy from the log: label -> (birth time, birth position).

    Each event must kill a living label and create exactly its two children.
    """
    living: Dict[Label, Tuple[float, Tuple[float, ...]]] = {
        (i,): (0.0, tuple(float(v) for v in x)) for i, (x, _) in enumerate(gamma.atoms)
    }
    for event in events:
        if event.parent not in living:
            raise ValueError(f"event at t={event.time} kills unknown label {format_label(event.parent)}")
        if event.children != (event.parent + (0,), event.parent + (1,)):
            raise ValueError(f"children of {format_label(event.parent)} do not extend its label")
        del living[event.parent]
        for child in event.children:
            living[child] = (event.time, event.position)
    return living
