"""Seeded random streams.

Every consumer of randomness asks for a named stream derived from the run
seed, so adding a new consumer never shifts the numbers another one sees.
Streams are numpy ``Generator`` objects over PCG64, seeded through
``SeedSequence``; both are specified bit-for-bit by numpy and portable
across platforms.
"""

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, stream: str = "default") -> np.random.Generator:
    """Return an independent generator for ``(seed, stream)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_key(stream),))
    return np.random.Generator(np.random.PCG64(ss))
