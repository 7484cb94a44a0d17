"""
Counter-based random streams, one per (seed, replica, purpose).

Every replica draws from its own Philox generator keyed by the run seed and
its replica id, so a replica's draws do not depend on which worker runs it or
in which order. Purposes separate independent uses inside one replica (the
simulation itself, the sensitivity sampler, the V_inf reference draws).
"""

from enum import IntEnum
from typing import List, Sequence

import numpy as np


class StreamPurpose(IntEnum):
    SIMULATION = 0
    REFERENCE = 1
    INITIAL = 2


def replica_stream(seed: int, replica_id: int, purpose: StreamPurpose = StreamPurpose.SIMULATION) -> np.random.Generator:
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(replica_id)))
    return np.random.Generator(np.random.Philox(sequence))


def reference_stream(seed: int, purpose: StreamPurpose = StreamPurpose.REFERENCE) -> np.random.Generator:
    """Run-level stream for draws that belong to no replica."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(purpose),))
    return np.random.Generator(np.random.Philox(sequence))


def split_batches(ids: Sequence[int], workers: int) -> List[List[int]]:
    """Contiguous, near-equal batches of replica ids (first batches take the remainder)."""
    ids = list(ids)
    workers = max(1, min(workers, len(ids))) if ids else 1
    size, extra = divmod(len(ids), workers)
    batches, start = [], 0
    for i in range(workers):
        stop = start + size + (1 if i < extra else 0)
        if stop > start:
            batches.append(ids[start:stop])
        start = stop
    return batches
