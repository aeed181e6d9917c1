"""Deterministic seed derivation and random generator construction.

Every random stream in this package is keyed by a 64-bit seed derived from a
master seed and an integer path via a SplitMix64 chain, then fed as the key of
a Philox4x64 counter-based generator.  Both primitives are fully specified,
so any implementation (in any language) can reproduce the streams:

* SplitMix64: Steele, Lea & Flood's mixing function over 64-bit state.
* Philox4x64-10: counter-based generator, as exposed by ``numpy.random.Philox``.

``derive_seed(master, a, b, ...)`` absorbs each path component into the state
before advancing, so (master, 0, 1) and (master, 1, 0) yield independent
streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    """Advance SplitMix64 state once; return (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def derive_seed(master_seed: int, *path: int) -> int:
    """Derive a 64-bit child seed from a master seed and an integer path.

    Each component is mixed as (part + 1) * GOLDEN before being absorbed, so
    a zero component still perturbs the state and (m,) differs from (m, 0).
    """
    state = master_seed & _MASK64
    _, out = _splitmix64(state)
    for part in path:
        mixed = (((part & _MASK64) + 1) * _GOLDEN) & _MASK64
        state = (state ^ mixed) & _MASK64
        state, out = _splitmix64(state)
    return out


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Build a Philox generator keyed by ``derive_seed(seed, *path)``."""
    key = derive_seed(seed, *path) if path else seed & _MASK64
    return np.random.Generator(np.random.Philox(key=key))
