"""Counter-based random streams with one substream per path.

Every path ``i`` of an ensemble seeded with ``seed`` owns the Philox stream
``SeedSequence(seed, spawn_key=(i, stream))``.  Results therefore do not
depend on how paths are split across blocks or threads.
"""
from __future__ import annotations

import numpy as np

# substream ids
GAUSS = 0
JUMPS = 1
SUBORDINATOR = 2


def seed_sequence(seed: int, index: int, stream: int = GAUSS) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(index), int(stream)))


def bit_generator(seed: int, index: int, stream: int = GAUSS) -> np.random.Philox:
    return np.random.Philox(seed_sequence(seed, index, stream))


def generator(seed: int, index: int, stream: int = GAUSS) -> np.random.Generator:
    return np.random.Generator(bit_generator(seed, index, stream))


def block_generators(seed: int, start: int, stop: int, stream: int = GAUSS) -> list:
    """Generators for paths ``start, ..., stop - 1``."""
    return [generator(seed, i, stream) for i in range(start, stop)]
