"""Seed plumbing: every source of randomness in the package draws from a
single user seed through a named sub-stream, so individual stages (network
init, pair sampling, SGD shuffling, data synthesis) can be reproduced in
isolation."""

from __future__ import annotations

import zlib

import numpy as np


def _seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(tag,))


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream `name` of the master `seed`."""
    return np.random.default_rng(_seed_sequence(seed, name))


def substream_seed(seed: int, name: str) -> int:
    """Derived integer seed, for APIs that take a seed rather than a generator."""
    return int(_seed_sequence(seed, name).generate_state(1, np.uint64)[0])
