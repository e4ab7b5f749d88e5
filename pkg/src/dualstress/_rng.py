"""Named seed derivation.

Every random stream in the package is obtained from a master seed plus a
tuple of names, e.g. ``derive_rng(seed, "dml", "fold", 3, "y")``. No module
touches global RNG state.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def _sequence(seed, names):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(_key(n) for n in names)])


def derive_seed(seed, *names):
    """Deterministic non-negative 63-bit seed for ``(seed, *names)``."""
    return int(_sequence(seed, names).generate_state(1, dtype=np.uint64)[0]) & 0x7FFFFFFFFFFFFFFF


def derive_rng(seed, *names):
    return np.random.default_rng(_sequence(seed, names))
