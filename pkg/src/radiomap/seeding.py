"""Named random sub-streams derived from one integer seed."""
import zlib

import numpy as np


def stream_key(name):
    return zlib.crc32(str(name).encode("utf-8"))


def substream(seed, *names):
    """Independent generator for ``(seed, *names)``; stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [stream_key(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
