"""Seeded random streams.

All randomness flows from one integer seed through numpy's counter-based
Philox bit generator. Independent batteries draw from named child streams so
adding a new check never shifts the samples of an existing one.
"""

import zlib

import numpy as np


def make_rng(seed: int, stream: str = "") -> np.random.Generator:
    """Return a Philox generator for `seed`, split by the `stream` name."""
    spawn_key = (zlib.crc32(stream.encode("utf-8")),) if stream else ()
    seed_seq = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seed_seq))
