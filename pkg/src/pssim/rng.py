"""Named random streams fanned out from a single master seed.

Every stochastic subsystem (init, per-worker sampling, delays, crashes, ...)
draws from its own generator so that changing one consumer never perturbs
another.  Stream identity is (master seed, *key parts), mapped to a
SeedSequence deterministically across platforms and runs.
"""

import hashlib

import numpy as np


def _key_int(part: int | str) -> int:
    if isinstance(part, int):
        return part
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *key: int | str) -> np.random.Generator:
    """Return the generator for the named stream under ``seed``."""
    entropy = [seed] + [_key_int(part) for part in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
