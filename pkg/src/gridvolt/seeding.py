"""Named random substreams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for component ``name``; independent of every other name."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_key(name),)))


def derive_seed(seed: int, name: str) -> int:
    """Integer seed for APIs that take one (e.g. profile generation, k-means)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_key(name),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
