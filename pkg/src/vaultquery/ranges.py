"""Dyadic (canonical) ranges over a power-of-two domain ``[0, m)``.

A canonical range is ``[j * 2**i, (j + 1) * 2**i)``. A value belongs to
exactly ``log2(m) + 1`` of them (its root-to-leaf path) and any interval
``[lo, hi)`` splits into at most ``2 * log2(m)`` disjoint ones.
"""

from __future__ import annotations

from .model import Keyword


def is_power_of_two(m: int) -> bool:
    return m >= 1 and m & (m - 1) == 0


def padded_domain(size: int) -> int:
    """Smallest power of two >= size."""
    if size < 1:
        raise ValueError("domain size must be positive")
    return 1 << (size - 1).bit_length()


def log2(m: int) -> int:
    if not is_power_of_two(m):
        raise ValueError(f"domain size {m} is not a power of two")
    return m.bit_length() - 1


def range_keywords(value: int, m: int) -> list[tuple[int, int]]:
    """Canonical ranges containing ``value``, root first."""
    depth = log2(m)
    if not 0 <= value < m:
        raise ValueError(f"value {value} outside [0, {m})")
    out = []
    for level in range(depth, -1, -1):
        start = (value >> level) << level
        out.append((start, start + (1 << level)))
    return out


def range_cover(lo: int, hi: int, m: int) -> list[tuple[int, int]]:
    """Minimal disjoint canonical cover of the half-open interval ``[lo, hi)``.

    Greedy from both ends, bottom-up; the left pieces come first in
    increasing order, followed by the right pieces.
    """
    log2(m)
    if not 0 <= lo < hi <= m:
        raise ValueError(f"invalid interval [{lo}, {hi}) for domain {m}")
    left, right = [], []
    size = 1
    while lo < hi:
        if lo & size:
            left.append((lo, lo + size))
            lo += size
        if hi & size and lo < hi:
            hi -= size
            right.append((hi, hi + size))
        size <<= 1
    return left + right[::-1]


def range_keyword(space: str, start: int, end: int) -> Keyword:
    """Keyword naming the canonical range ``[start, end)`` of ``space``."""
    size = end - start
    if not is_power_of_two(size) or start % size:
        raise ValueError(f"[{start}, {end}) is not canonical")
    return Keyword(f"{space}#range", bytes((size.bit_length() - 1,)) + start.to_bytes(8, "big"))
