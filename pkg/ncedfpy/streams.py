"""
Counter-based random streams.

Every random draw in the package comes from a generator keyed by the run seed
and a tuple of counters (purpose tag, episode, iteration, sample...). A draw
therefore never depends on which thread made it or on how many draws other
threads made before it.
"""
from typing import Sequence

import numpy as np

# Purpose tags, first counter of every stream
DATASET = 1
ROLLOUT = 2
ENVIRONMENT = 3
CLOUD = 4
GOAL = 5
TRAINING = 6
VALIDATION = 7


def seed_sequence(seed: int, *counters: int) -> np.random.SeedSequence:
    if seed < 0 or any(c < 0 for c in counters):
        raise ValueError("Seeds and stream counters must be non-negative")
    return np.random.SeedSequence([int(seed)] + [int(c) for c in counters])


def stream(seed: int, *counters: int) -> np.random.Generator:
    """A Philox generator for the stream identified by (seed, *counters)."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *counters)))


def streams(seed: int, prefix: Sequence[int], count: int) -> list:
    """`count` independent generators (seed, *prefix, 0) ... (seed, *prefix, count-1)."""
    return [stream(seed, *prefix, i) for i in range(count)]
