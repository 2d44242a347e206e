"""Seeded randomness for samplers and generators.

Everything random in this package draws from a counter-based 64-bit
generator (Philox), so a seed produces the same stream on any platform
or word size.  Derived streams take a second key word instead of
re-seeding arithmetic on the caller's seed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["counter_rng"]

_MASK = (1 << 64) - 1


def counter_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & _MASK, stream & _MASK]))
