"""Named, independent random streams derived from integer seeds."""

import zlib

import numpy as np


def stream_key(name):
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed, stream):
    """Generator for ``(seed, stream)``; different stream names never share draws."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, stream_key(stream)]))
