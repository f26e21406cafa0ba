"""Per-component random streams derived from one 64-bit master seed."""
import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def stream_seed(seed, label, *extra):
    """Integer seed for the stream named ``label`` (plus optional integer keys)."""
    ss = np.random.SeedSequence([int(seed) & MASK64, zlib.crc32(label.encode()), *map(int, extra)])
    return int(ss.generate_state(2, dtype=np.uint64)[0])


def rng_for(seed, label, *extra):
    return np.random.default_rng(stream_seed(seed, label, *extra))
