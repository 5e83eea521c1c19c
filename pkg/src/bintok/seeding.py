"""Deterministic RNG derivation.

All randomness in the package is derived statelessly from (seed, salt,
counter) triples, so any step of any run can be reproduced in isolation and
training can resume from a checkpoint bit-exactly.
"""

import zlib

import numpy as np

# salt namespace, one per use site
SALT_INIT = 1
SALT_BATCH = 2
SALT_ROUTE = 3
SALT_DROPOUT = 4
SALT_SAMPLE = 5
SALT_CORPUS = 6

# seeds and step counters are stored as float32 checkpoint records
MAX_SEED = 2 ** 24


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < MAX_SEED:
        raise ValueError(f"seed must be in [0, {MAX_SEED})")
    return seed


def rng_for(seed: int, *salts: int) -> np.random.Generator:
    """Generator keyed by a seed and any number of integer salts."""
    entropy = [int(seed)] + [int(s) & 0xFFFFFFFF for s in salts]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def name_salt(name: str) -> int:
    """Stable integer salt for a parameter name (process-independent)."""
    return zlib.crc32(name.encode("utf-8"))
