"""Bit-sampling locality-sensitive hashing for Hamming distance.

Each of ``tables`` hash functions concatenates ``samples`` bit positions
drawn independently (with replacement) from a ``bits``-wide integer. Two
values at Hamming distance ``d`` agree on one function with probability
``(1 - d/bits) ** samples``; a proximity query matches when any function
agrees, so matches are approximate on both sides.
"""

from __future__ import annotations

import random

from .model import Keyword


class BitSamplingLSH:
    def __init__(self, bits: int = 64, tables: int = 8, samples: int = 8, seed: int = 0) -> None:
        if bits < 1 or tables < 1 or samples < 1:
            raise ValueError("bits, tables and samples must be positive")
        self.bits = bits
        self.tables = tables
        self.samples = samples
        rng = random.Random(seed)
        self.positions = [[rng.randrange(bits) for _ in range(samples)] for _ in range(tables)]

    def hashes(self, value: int) -> list[int]:
        out = []
        for positions in self.positions:
            h = 0
            for p in positions:
                h = (h << 1) | ((value >> p) & 1)
            out.append(h)
        return out

    def keywords(self, field: str, value: int) -> list[Keyword]:
        width = (self.samples + 7) // 8
        return [Keyword(f"{field}#lsh{t}", h.to_bytes(width, "big")) for t, h in enumerate(self.hashes(value))]


def bucket_collision_probability(distance: int, bits: int, samples: int) -> float:
    return (1 - distance / bits) ** samples


def match_probability(distance: int, bits: int, samples: int, tables: int) -> float:
    return 1 - (1 - bucket_collision_probability(distance, bits, samples)) ** tables
