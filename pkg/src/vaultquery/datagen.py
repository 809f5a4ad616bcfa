"""Reproducible census-style records and conjunctive query streams.

Frequency tables are ``value,probability`` CSV files. The package ships
synthetic stand-ins (100 last names, 100 first names per gender, ages 0-105,
51 state codes with approximate 1990 populations); real census frequency
files in the same format can be passed instead.

Records draw last name, age and state independently, and (gender, first
name) jointly: gender is female or male with probability 1/2 each, then the
first name comes from that gender's table. Ages of 105 and over are 105.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import Record, Schema, FieldSpec, TupleSpec, canonical_values
from .query import And, Eq

TABLE_FILES = {
    "last_name": "last_names.csv",
    "female": "female_first_names.csv",
    "male": "male_first_names.csv",
    "age": "ages.csv",
    "state": "states.csv",
}
GENDERS = ("female", "male")
MAX_AGE = 105
OPTIONAL_FIELDS = ("age", "first_name", "gender", "state")


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyTable:
    values: tuple[str, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values or len(self.values) != len(self.probabilities):
            raise TableError("table needs one probability per value")
        if len(set(self.values)) != len(self.values):
            raise TableError("duplicate values in table")
        if any(p < 0 for p in self.probabilities):
            raise TableError("negative probability")
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise TableError(f"probabilities sum to {sum(self.probabilities)!r}, not 1")

    @classmethod
    def from_csv(cls, source: str | Path | io.TextIOBase) -> "FrequencyTable":
        if isinstance(source, (str, Path)):
            with open(source, encoding="utf-8", newline="") as fh:
                return cls._read(fh)
        return cls._read(source)

    @classmethod
    def _read(cls, fh) -> "FrequencyTable":
        try:
            rows = [(r["value"], float(r["probability"])) for r in csv.DictReader(fh)]
        except (KeyError, ValueError, TypeError) as exc:
            raise TableError(f"malformed frequency table: {exc}") from exc
        return cls(tuple(v for v, _ in rows), tuple(p for _, p in rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value", "probability"])
        writer.writerows((v, repr(p)) for v, p in zip(self.values, self.probabilities))
        return buf.getvalue()

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.values, self.probabilities))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Indices into ``values``."""
        return rng.choice(len(self.values), size=n, p=np.asarray(self.probabilities))


@dataclass(frozen=True)
class CensusTables:
    last_name: FrequencyTable
    female: FrequencyTable
    male: FrequencyTable
    age: FrequencyTable
    state: FrequencyTable

    def __post_init__(self) -> None:
        ages = [int(v) for v in self.age.values]
        if min(ages) < 0:
            raise TableError("negative age")

    def ages(self) -> list[int]:
        return [min(int(v), MAX_AGE) for v in self.age.values]


def load_tables(directory: str | Path | None = None) -> CensusTables:
    """Tables from ``directory``, or the bundled stand-ins."""
    out = {}
    for key, name in TABLE_FILES.items():
        if directory is None:
            text = resources.files("vaultquery").joinpath("data").joinpath(name).read_text(encoding="utf-8")
            out[key] = FrequencyTable.from_csv(io.StringIO(text))
        else:
            out[key] = FrequencyTable.from_csv(Path(directory) / name)
    return CensusTables(**out)


def census_schema(tables: CensusTables | None = None, extra: Sequence[str] = ()) -> Schema:
    """The five census fields with tuple indexes for 3-clause conjunctions.

    Args:
        tables: Supplies the state domain (bundled tables by default).
        extra: Additional capabilities on ``age`` (e.g. ``("range",)``).
    """
    tables = tables or load_tables()
    return Schema(
        fields=(
            FieldSpec("last_name", "text", ("eq",), max_len=50),
            FieldSpec("first_name", "text", ("eq",), max_len=50),
            FieldSpec("gender", "enum", ("eq",), values=GENDERS),
            FieldSpec("age", "integer", ("eq",) + tuple(extra), lo=0, hi=MAX_AGE, width=1),
            FieldSpec("state", "enum", ("eq",), values=tables.state.values),
        ),
        tuples=TupleSpec(3, ("last_name", "first_name", "gender", "age", "state"), required=("last_name",)),
    )


def gen_records(n: int, tables: CensusTables | None = None, seed: int = 0, start_id: int = 0) -> list[Record]:
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    tables = tables or load_tables()
    rng = np.random.default_rng(seed)
    last = tables.last_name.sample(rng, n)
    ages = tables.age.sample(rng, n)
    states = tables.state.sample(rng, n)
    male = rng.random(n) < 0.5
    female_names = tables.female.sample(rng, n)
    male_names = tables.male.sample(rng, n)
    age_values = tables.ages()
    out = []
    for i in range(n):
        is_male = bool(male[i])
        first = tables.male.values[male_names[i]] if is_male else tables.female.values[female_names[i]]
        out.append(
            Record(
                start_id + i,
                {
                    "last_name": tables.last_name.values[last[i]],
                    "first_name": first,
                    "gender": GENDERS[is_male],
                    "age": age_values[ages[i]],
                    "state": tables.state.values[states[i]],
                },
            )
        )
    return out


@dataclass(frozen=True)
class GeneratedQuery:
    query: And
    matches: bool
    b: int
    removed: tuple[str, str]


def _signature(record: Record, fields: tuple[str, ...], schema: Schema) -> tuple:
    return tuple(canonical_values(schema[f], record.fields[f])[0] for f in fields)


def _conjunction(record: Record, kept: tuple[str, ...]) -> And:
    return And(tuple(Eq(f, record.fields[f]) for f in ("last_name",) + kept))


def gen_queries(
    db: Sequence[Record],
    count: int,
    seed: int = 0,
    tables: CensusTables | None = None,
    max_retries: int = 10_000,
) -> list[GeneratedQuery]:
    """Three-clause conjunctions, half drawn from the database, half non-matching.

    Each query flips a fair bit ``b``. With ``b = 0`` a database record is
    sampled; otherwise fresh records are drawn from the generation
    distribution until one yields a query matching nothing. Either way two of
    age, first name, gender and state are dropped uniformly at random, and
    last name is always kept.

    Raises:
        ValueError: Empty database.
        RuntimeError: No non-matching query within ``max_retries`` draws.
    """
    if not db:
        raise ValueError("query generation needs a nonempty database")
    tables = tables or load_tables()
    schema = census_schema(tables)
    rng = np.random.default_rng(seed)
    pairs = [(a, b) for i, a in enumerate(OPTIONAL_FIELDS) for b in OPTIONAL_FIELDS[i + 1 :]]
    present: dict[tuple[str, ...], set[tuple]] = {}
    for pair in pairs:
        kept = ("last_name",) + tuple(f for f in OPTIONAL_FIELDS if f not in pair)
        present[kept] = {_signature(r, kept, schema) for r in db}
    out = []
    for _ in range(count):
        b = int(rng.integers(2))
        if b == 0:
            record = db[int(rng.integers(len(db)))]
            removed = pairs[int(rng.integers(len(pairs)))]
        else:
            for _attempt in range(max_retries):
                record = gen_records(1, tables, seed=int(rng.integers(2**63)))[0]
                removed = pairs[int(rng.integers(len(pairs)))]
                kept = ("last_name",) + tuple(f for f in OPTIONAL_FIELDS if f not in removed)
                if _signature(record, kept, schema) not in present[kept]:
                    break
            else:
                raise RuntimeError(f"no non-matching query found in {max_retries} draws")
        kept_optional = tuple(f for f in OPTIONAL_FIELDS if f not in removed)
        kept = ("last_name",) + kept_optional
        matches = _signature(record, kept, schema) in present[kept]
        out.append(GeneratedQuery(_conjunction(record, kept_optional), matches, b, removed))
    return out
