"""Named random substreams derived from a single master seed.

Every consumer of randomness asks for its own stream by name, so changing
one knob (H, K, the algorithm) never shifts the draws seen by another
consumer. This is what makes paired FedDec/FedAvg comparisons use common
random numbers.
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "graph": 0,
    "data": 1,
    "batch": 2,
    "links": 3,
    "server": 4,
    "calibration": 5,
    "monitor": 6,
}


def stream(seed: int, name: str, *sub: int) -> np.random.Generator:
    """Return the generator for substream ``name`` (optionally indexed by ``sub``)."""
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *map(int, sub)))
    return np.random.default_rng(ss)


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
