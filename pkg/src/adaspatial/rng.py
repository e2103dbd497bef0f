"""Named, independent random streams derived from one experiment seed.

Ablations that differ in a single axis (say, whether the delta map is used)
must still see identical data order, initial weights and diffusion noise, so
each consumer draws from its own stream keyed by name rather than from a
shared generator.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init", "noise", "split")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
