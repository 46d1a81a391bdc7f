"""Seeding helpers.

All randomness in the package flows through numpy's Philox bit generator, a
counter-based generator with a documented, platform-stable algorithm. Streams
are derived from a root seed plus a tuple of integer tags via SeedSequence, so
independent components (task generation, hole sampling, weight init, restarts)
never share or race a stream.
"""
from __future__ import annotations

import numpy as np

# Stream tags. Keep values stable: they are part of every dataset's identity.
TAG_MIXTURE = 1
TAG_HOLES = 2
TAG_PARAMS = 3
TAG_WEIGHTS = 4
TAG_TRAIN = 5
TAG_RESTARTS = 6
TAG_ORACLE = 7
TAG_EVOLUTION = 8
TAG_META = 9


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    """Philox generator for the stream identified by (seed, *tags)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *tags: int) -> int:
    """A child integer seed for the stream identified by (seed, *tags)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
