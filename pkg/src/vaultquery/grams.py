"""kappa-gram extraction and the ordered gram space used by range lookups.

Strings are padded to a fixed length ``alpha`` with a NUL pad symbol that
can never occur in canonical text, so pad-bearing grams never match a query
pattern. Forward grams pad on the right and carry 1-based positions;
end-anchored grams pad on the left and carry negative positions (``-1`` is
the last gram of the real string).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .ranges import padded_domain

PAD = "\x00"
PAD_BYTE = b"\x00"

Text = Union[str, bytes]


def _pad_symbol(s: Text) -> Text:
    return PAD if isinstance(s, str) else PAD_BYTE


def kgram_extract(s: Text, kappa: int, alpha: int | None = None, positional: bool = False, from_end: bool = False) -> list:
    """All ``alpha - kappa + 1`` grams of ``s`` padded to ``alpha``.

    ``positional`` pairs each gram with its position; ``from_end`` uses
    negative positions counted from the end of the real string.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    alpha = len(s) if alpha is None else alpha
    if kappa > alpha:
        raise ValueError(f"kappa={kappa} exceeds padded length alpha={alpha}")
    if len(s) > alpha:
        raise ValueError(f"string of length {len(s)} exceeds alpha={alpha}")
    pad = _pad_symbol(s) * (alpha - len(s))
    count = alpha - kappa + 1
    if from_end:
        padded = pad + s
        grams = [padded[alpha - kappa - j : alpha - j] for j in range(count)]
        return [(-(j + 1), g) for j, g in enumerate(grams)] if positional else grams
    padded = s + pad
    grams = [padded[i : i + kappa] for i in range(count)]
    return [(i + 1, g) for i, g in enumerate(grams)] if positional else grams


def pattern_grams(pattern: Text, kappa: int) -> list[Text]:
    """Consecutive overlapping grams covering ``pattern`` (length >= kappa)."""
    if len(pattern) < kappa:
        raise ValueError(f"pattern shorter than kappa={kappa}")
    return [pattern[i : i + kappa] for i in range(len(pattern) - kappa + 1)]


@dataclass(frozen=True)
class GramSpace:
    """Orders grams over ``alphabet`` as base-(A [+1]) integers.

    With ``padded`` the pad symbol ranks above every letter, so all grams
    with a given prefix (including end-of-string ones) form one interval.
    """

    alphabet: str
    kappa: int
    padded: bool = True

    @property
    def symbols(self) -> str:
        return self.alphabet + (PAD if self.padded else "")

    @property
    def base(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return self.base**self.kappa

    @property
    def m(self) -> int:
        return padded_domain(self.size)

    def encode(self, gram: Text) -> int:
        if isinstance(gram, bytes):
            gram = gram.decode("latin-1")
        if len(gram) != self.kappa:
            raise ValueError(f"gram {gram!r} is not of length {self.kappa}")
        value = 0
        symbols = self.symbols
        for ch in gram:
            digit = symbols.find(ch)
            if digit < 0:
                raise ValueError(f"symbol {ch!r} outside the gram alphabet")
            value = value * self.base + digit
        return value

    def decode(self, value: int) -> str:
        out = []
        for _ in range(self.kappa):
            value, digit = divmod(value, self.base)
            out.append(self.symbols[digit])
        return "".join(reversed(out))

    def prefix_bounds(self, prefix: Text) -> tuple[str, str]:
        """Smallest and largest grams starting with ``prefix``."""
        if isinstance(prefix, bytes):
            prefix = prefix.decode("latin-1")
        fill = self.kappa - len(prefix)
        if fill < 0:
            raise ValueError("prefix longer than kappa")
        return prefix + self.symbols[0] * fill, prefix + self.symbols[-1] * fill
