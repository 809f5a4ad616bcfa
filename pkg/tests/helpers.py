"""Random schemas, records and queries shared by the oracle tests."""

from __future__ import annotations

import random

from vaultquery.model import FieldSpec, Record, Schema, TupleSpec
from vaultquery.query import And, Eq, Not, Or, Proximity, Range, Stem, Substring, Wildcard

VOCAB = (
    "connect connected connecting connection connections generate generates generated generating "
    "general generally relate related relating relation relational test tests tested testing tester "
    "string strings stringing sting stings run runs running runner ran rest rested resting restless "
    "adjust adjusted adjusting adjustable hope hoped hoping hopeful care cared caring careful"
).split()
KINDS = ("alpha", "beta", "gamma", "delta", "eps")
TAGS = ("red", "green", "blue", "gold", "grey", "pink")


def random_schema(rng: random.Random) -> Schema:
    hi = rng.choice((15, 100, 255, 511, 1023))
    return Schema(
        fields=(
            FieldSpec("word", "text", ("eq", "stem", "grams", "pos_grams", "suffix_grams"), max_len=16, kappa=3),
            FieldSpec("code", "text", ("gram_range",), max_len=8, kappa=3, alphabet="abcd"),
            FieldSpec("age", "integer", ("range", "proximity"), lo=0, hi=hi, width=2, radius=rng.choice((1, 2, 3))),
            FieldSpec("score", "integer", ("small_range",), lo=0, hi=31, width=1),
            FieldSpec("kind", "enum", ("eq",), values=KINDS),
            FieldSpec("tags", "tags", ("eq",)),
        ),
        tuples=TupleSpec(2, ("word", "kind", "age")),
    )


def random_records(rng: random.Random, schema: Schema, n: int, start: int = 0) -> list[Record]:
    hi = schema["age"].hi
    out = []
    for i in range(n):
        out.append(
            Record(
                start + i,
                {
                    "word": rng.choice(VOCAB),
                    "code": "".join(rng.choice("abcd") for _ in range(rng.randint(1, 8))),
                    "age": rng.randint(0, hi),
                    "score": rng.randint(0, 31),
                    "kind": rng.choice(KINDS),
                    "tags": rng.sample(TAGS, rng.randint(0, 3)),
                },
            )
        )
    return out


def _sub(rng: random.Random, text: str, length: int) -> str:
    if len(text) <= length:
        return text
    start = rng.randint(0, len(text) - length)
    return text[start : start + length]


def _wild(rng: random.Random, records: list[Record], anchored: bool) -> Wildcard:
    long = [r.fields["word"] for r in records if len(r.fields["word"]) >= 7] or ["connecting"]
    word = rng.choice(long)
    if not anchored:
        word = _sub(rng, word, rng.randint(7, len(word)))
    hole = rng.randint(3, len(word) - 4)
    pattern = word[:hole] + "_" + word[hole + 1 :]
    return Wildcard("word", pattern, rng.choice(("start", "end")) if anchored else None)


def random_query(rng: random.Random, row: int, schema: Schema, records: list[Record]):
    """A query the compiler should route through combiner ``row``."""
    hi = schema["age"].hi
    some = rng.choice(records) if records else None
    value = some.fields if some else {"word": "testing", "code": "abc", "age": 1, "score": 1, "kind": "alpha"}
    pick_age = lambda: value["age"] if rng.random() < 0.6 else rng.randint(0, hi)  # noqa: E731
    if row == 1:
        return Eq("age", pick_age())
    if row == 2:
        a, b = rng.sample(KINDS, 2)
        third = [Eq("tags", rng.choice(TAGS))] if rng.random() < 0.5 else []
        return Or(tuple([Eq("kind", a), Eq("kind", b)] + third))
    if row == 3:
        word = value["word"] if rng.random() < 0.7 else rng.choice(VOCAB)
        return And((Eq("word", word), Eq("kind", value["kind"] if rng.random() < 0.7 else rng.choice(KINDS))))
    if row == 4:
        return Stem("word", rng.choice(VOCAB))
    if row == 5:
        return Proximity("age", pick_age())
    if row == 6:
        lo = rng.randint(0, 31)
        return Range("score", lo, rng.randint(lo, 31))
    if row == 7:
        lo = rng.randint(0, hi)
        return Range("age", lo, rng.randint(lo, hi), lo_inclusive=rng.random() < 0.8, hi_inclusive=rng.random() < 0.8)
    if row == 8:
        if rng.random() < 0.5:
            return Not(Eq("age", pick_age()))
        lo = rng.randint(0, hi)
        return Not(Range("age", lo, rng.randint(lo, hi)))
    if row == 9:
        return Substring("word", _sub(rng, value["word"], 3) if rng.random() < 0.8 else "xyz")
    if row == 10:
        return Substring("code", _sub(rng, value["code"], rng.randint(1, 2)))
    if row == 11:
        word = value["word"]
        if rng.random() < 0.5:
            return Substring("word", word[: rng.randint(3, len(word))], "start")
        return Substring("word", word[-rng.randint(3, len(word)) :], "end")
    if row == 12:
        word = value["word"] if len(value["word"]) >= 4 else "testing"
        return Substring("word", _sub(rng, word, rng.randint(4, max(4, len(word)))))
    if row == 13:
        return _wild(rng, records, anchored=True)
    if row == 14:
        return _wild(rng, records, anchored=False)
    raise ValueError(row)
