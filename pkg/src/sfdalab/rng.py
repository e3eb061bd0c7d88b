"""Named counter-based random streams.

All randomness in the package is drawn from numpy's ``Philox`` bit generator
(Philox4x64 with 10 rounds; multipliers 0xD2E7470EE14C6C93 and
0xCA5A826395121157, Weyl increments 0x9E3779B97F4A7C15 and 0xBB67AE8584CAA73B).

A stream is addressed by ``(seed, name, *coords)``:

* the 128-bit key is ``(seed, crc32(name))``
* the 256-bit counter starts at ``(0, coords[0], coords[1], coords[2])``

The lowest counter word advances with every block of four outputs, so
distinct coordinates never overlap in practice.  There is no global RNG.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def name_code(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *coords: int) -> np.random.Generator:
    """Return a fresh generator for the stream ``(seed, name, *coords)``."""
    if len(coords) > 3:
        raise ValueError("at most three stream coordinates are supported")
    if any(c < 0 for c in coords):
        raise ValueError(f"stream coordinates must be non-negative, got {coords}")
    key = np.array([int(seed) & _MASK64, name_code(name)], dtype=np.uint64)
    counter = np.zeros(4, dtype=np.uint64)
    for i, c in enumerate(coords):
        counter[i + 1] = int(c) & _MASK64
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
