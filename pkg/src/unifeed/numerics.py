"""Shared numeric plumbing: working precision and seed derivation."""

from __future__ import annotations

from fractions import Fraction

import gmpy2

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def precision_context(bits: int):
    """A gmpy2 context with the given mantissa width.

    Use as ``with precision_context(256):`` around any block doing
    arbitrary-precision posterior arithmetic.  Rounding is to nearest.
    """
    if bits < 2:
        raise ValueError(f"precision must be at least 2 bits, got {bits}")
    return gmpy2.context(precision=bits)


def to_mpfr(value):
    """Exact-input conversion to an mpfr at the active context precision."""
    if isinstance(value, Fraction):
        return gmpy2.mpfr(gmpy2.mpq(value.numerator, value.denominator))
    return gmpy2.mpfr(value)


def splitmix64(state: int) -> int:
    """One output of the SplitMix64 generator for the given state."""
    z = (state + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master_seed: int, index: int) -> int:
    """Seed for one trial: the index-th SplitMix64 output from master_seed.

    Pure 64-bit integer arithmetic, so the mapping is identical on every
    platform, and trials can be dealt to workers in any order without
    changing the stream each trial sees.
    """
    return splitmix64((master_seed + index * _GOLDEN) & MASK64)
