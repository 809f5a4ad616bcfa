"""Core data model: schemas, records, canonical keywords and leakage accounting.

Keywords are the atom every index in the package manipulates. A keyword is a
``(field, value)`` pair whose value is a canonical byte string:

* text is ASCII case-folded (no Unicode normalization) and UTF-8 encoded,
* integers are fixed-width big-endian, so byte order equals numeric order,
* enumerations are encoded as their big-endian index in the field domain,
* tag sets yield one case-folded keyword per distinct tag.
"""

from __future__ import annotations

import base64
import enum
import json
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

MAX_RECORD_ID = 2**64 - 1

CAPABILITIES = frozenset(
    {
        "eq",
        "range",
        "small_range",
        "proximity",
        "lsh",
        "stem",
        "grams",
        "gram_range",
        "pos_grams",
        "suffix_grams",
    }
)

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


class SchemaError(ValueError):
    """A record, field or value does not conform to the schema."""


class FieldType(str, enum.Enum):
    TEXT = "text"
    INTEGER = "integer"
    ENUM = "enum"
    TAGS = "tags"


@dataclass(frozen=True)
class FieldSpec:
    """One schema column plus the indexes built over it.

    ``capabilities`` names the extra indexing recipes applied at Init; an
    empty tuple means the field is stored but never searchable.
    """

    name: str
    type: FieldType
    capabilities: tuple[str, ...] = ("eq",)
    lo: int = 0
    hi: int | None = None
    width: int = 8
    values: tuple[str, ...] = ()
    max_len: int = 64
    kappa: int = 3
    alphabet: str = DEFAULT_ALPHABET
    radius: int = 1
    lsh_tables: int = 8
    lsh_bits: int = 8
    lsh_seed: int = 0

    def __post_init__(self) -> None:
        if not self.name or not self.name.replace("_", "").isalnum():
            raise SchemaError(f"invalid field name {self.name!r}")
        object.__setattr__(self, "type", FieldType(self.type))
        object.__setattr__(self, "capabilities", tuple(self.capabilities))
        object.__setattr__(self, "values", tuple(self.values))
        unknown = set(self.capabilities) - CAPABILITIES
        if unknown:
            raise SchemaError(f"field {self.name}: unknown capabilities {sorted(unknown)}")
        if self.type is FieldType.INTEGER:
            if self.lo < 0:
                raise SchemaError(f"field {self.name}: integer domains must be non-negative")
            if self.hi is not None and self.hi < self.lo:
                raise SchemaError(f"field {self.name}: hi < lo")
            if self.hi is not None and self.hi >= 256**self.width:
                raise SchemaError(f"field {self.name}: domain does not fit in {self.width} bytes")
        if self.type is FieldType.ENUM:
            if not self.values:
                raise SchemaError(f"field {self.name}: enum needs a value domain")
            folded = [v.lower() for v in self.values]
            if len(set(folded)) != len(folded):
                raise SchemaError(f"field {self.name}: enum values collide under case folding")
        if self.kappa < 1:
            raise SchemaError(f"field {self.name}: kappa must be >= 1")
        ordered = {"range", "small_range", "proximity", "lsh"}
        if ordered & set(self.capabilities) and self.type is not FieldType.INTEGER:
            raise SchemaError(f"field {self.name}: {sorted(ordered & set(self.capabilities))} need an integer field")
        stringy = {"stem", "grams", "gram_range", "pos_grams", "suffix_grams"}
        if stringy & set(self.capabilities) and self.type is not FieldType.TEXT:
            raise SchemaError(f"field {self.name}: string capabilities need a text field")
        if {"range", "small_range", "proximity"} & set(self.capabilities) and self.hi is None:
            raise SchemaError(f"field {self.name}: ordered capabilities need domain bounds")
        if {"grams", "pos_grams", "suffix_grams"} & set(self.capabilities) and self.kappa > self.max_len:
            raise SchemaError(f"field {self.name}: kappa exceeds max_len")

    @property
    def indexed(self) -> bool:
        return bool(self.capabilities)

    @property
    def enum_width(self) -> int:
        return 1 if len(self.values) <= 256 else 2

    @property
    def domain_size(self) -> int:
        if self.type is FieldType.ENUM:
            return len(self.values)
        if self.hi is None:
            return 256**self.width
        return self.hi - self.lo + 1

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "type": self.type.value, "index": list(self.capabilities)}
        defaults = FieldSpec(name="x", type=FieldType.TEXT)
        for key in ("lo", "hi", "width", "max_len", "kappa", "alphabet", "radius", "lsh_tables", "lsh_bits", "lsh_seed"):
            value = getattr(self, key)
            if value != getattr(defaults, key):
                out[key] = value
        if self.values:
            out["values"] = list(self.values)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FieldSpec":
        data = dict(data)
        caps = data.pop("index", data.pop("capabilities", ["eq"]))
        if data.pop("indexed", True) is False:
            caps = []
        try:
            return cls(capabilities=tuple(caps), **data)
        except TypeError as exc:
            raise SchemaError(str(exc)) from exc


@dataclass(frozen=True)
class TupleSpec:
    """Conjunction support: every k-subset of ``fields`` containing ``required``."""

    k: int
    fields: tuple[str, ...]
    required: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(sorted(self.fields)))
        object.__setattr__(self, "required", tuple(sorted(self.required)))
        if len(set(self.fields)) != len(self.fields):
            raise SchemaError("tuple fields duplicated")
        if not 1 <= self.k <= len(self.fields):
            raise SchemaError(f"tuple arity k={self.k} must be in 1..{len(self.fields)}")
        if not set(self.required) <= set(self.fields):
            raise SchemaError("required tuple fields must be tuple fields")
        if len(self.required) > self.k:
            raise SchemaError("more required fields than tuple arity")


@dataclass(frozen=True)
class Schema:
    fields: tuple[FieldSpec, ...]
    tuples: TupleSpec | None = None
    max_payload: int = 1 << 16

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(self.fields))
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate field names")
        if self.tuples is not None:
            missing = set(self.tuples.fields) - set(names)
            if missing:
                raise SchemaError(f"tuple spec names unknown fields {sorted(missing)}")
        object.__setattr__(self, "_by_name", {f.name: f for f in self.fields})

    def __getitem__(self, name: str) -> FieldSpec:
        try:
            return self._by_name[name]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"unknown field {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._by_name  # type: ignore[attr-defined]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def validate_record(self, record: "Record") -> None:
        if set(record.fields) != set(self.names):
            extra = set(record.fields) - set(self.names)
            missing = set(self.names) - set(record.fields)
            raise SchemaError(f"record {record.id}: extra fields {sorted(extra)}, missing {sorted(missing)}")
        if len(record.payload) > self.max_payload:
            raise SchemaError(f"record {record.id}: payload exceeds {self.max_payload} bytes")
        for spec in self.fields:
            canonical_values(spec, record.fields[spec.name])

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"fields": [f.to_dict() for f in self.fields], "max_payload": self.max_payload}
        if self.tuples is not None:
            out["tuples"] = {
                "k": self.tuples.k,
                "fields": list(self.tuples.fields),
                "required": list(self.tuples.required),
            }
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Schema":
        try:
            fields = tuple(FieldSpec.from_dict(f) for f in data["fields"])
        except KeyError as exc:
            raise SchemaError(f"schema missing {exc}") from exc
        tuples = None
        if data.get("tuples"):
            t = data["tuples"]
            tuples = TupleSpec(k=int(t["k"]), fields=tuple(t["fields"]), required=tuple(t.get("required", ())))
        return cls(fields=fields, tuples=tuples, max_payload=int(data.get("max_payload", 1 << 16)))

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Record:
    id: int
    fields: Mapping[str, Any]
    payload: bytes = b""

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or not 0 <= self.id <= MAX_RECORD_ID:
            raise SchemaError(f"record id {self.id!r} is not a u64")
        object.__setattr__(self, "fields", dict(self.fields))
        object.__setattr__(self, "payload", bytes(self.payload))

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "fields": dict(self.fields),
            "payload": base64.b64encode(self.payload).decode("ascii"),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Record":
        try:
            return cls(
                id=int(data["id"]),
                fields=data["fields"],
                payload=base64.b64decode(data.get("payload", ""), validate=True),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"malformed record: {exc}") from exc

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Record":
        return cls.from_json(json.loads(raw.decode("utf-8")))


def read_records(path: str | Path) -> list[Record]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(Record.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_records(path: str | Path, records: Iterable[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


@dataclass(frozen=True, order=True)
class Keyword:
    field: str
    value: bytes

    def to_bytes(self) -> bytes:
        name = self.field.encode("utf-8")
        return len(name).to_bytes(2, "big") + name + self.value

    def __repr__(self) -> str:
        return f"Keyword({self.field}, {self.value!r})"


def fold_text(raw: str) -> bytes:
    """ASCII case-fold; non-ASCII bytes pass through unchanged."""
    try:
        data = raw.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise SchemaError("text values must be valid Unicode (no lone surrogates)") from exc
    if b"\x00" in data:
        raise SchemaError("text values may not contain NUL")
    return data.lower()


def canonical_values(spec: FieldSpec, raw: Any) -> list[bytes]:
    """Canonical encodings of one field value (one per tag for tag sets)."""
    if spec.type is FieldType.TEXT:
        if not isinstance(raw, str):
            raise SchemaError(f"field {spec.name}: expected text, got {type(raw).__name__}")
        value = fold_text(raw)
        if len(value) > spec.max_len:
            raise SchemaError(f"field {spec.name}: value longer than {spec.max_len} bytes")
        return [value]
    if spec.type is FieldType.INTEGER:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise SchemaError(f"field {spec.name}: expected integer, got {type(raw).__name__}")
        if raw < spec.lo or (spec.hi is not None and raw > spec.hi) or raw >= 256**spec.width:
            raise SchemaError(f"field {spec.name}: {raw} outside domain")
        return [raw.to_bytes(spec.width, "big")]
    if spec.type is FieldType.ENUM:
        if not isinstance(raw, str):
            raise SchemaError(f"field {spec.name}: expected enum label, got {type(raw).__name__}")
        try:
            index = [v.lower() for v in spec.values].index(raw.lower())
        except ValueError:
            raise SchemaError(f"field {spec.name}: {raw!r} not in enum domain") from None
        return [index.to_bytes(spec.enum_width, "big")]
    # tags
    if isinstance(raw, str):
        raw = raw.split()
    if not isinstance(raw, (list, tuple)) or not all(isinstance(t, str) for t in raw):
        raise SchemaError(f"field {spec.name}: expected a list of tags")
    return sorted({fold_text(t) for t in raw if t})


def canonicalize_keyword(schema: Schema, field_name: str, raw: Any) -> Keyword:
    spec = schema[field_name]
    if spec.type is FieldType.TAGS:
        if not isinstance(raw, str) or not raw or " " in raw:
            raise SchemaError(f"field {field_name}: a tag keyword is a single non-empty token")
    values = canonical_values(spec, raw)
    return Keyword(field_name, values[0])


def decode_value(spec: FieldSpec, value: bytes) -> Any:
    """Inverse of the canonical encoding (text comes back case-folded)."""
    if spec.type is FieldType.INTEGER:
        return int.from_bytes(value, "big")
    if spec.type is FieldType.ENUM:
        return spec.values[int.from_bytes(value, "big")]
    return value.decode("utf-8")


def extract_keywords(record: Record, schema: Schema) -> set[Keyword]:
    """Base equality keywords: one per indexed scalar field, one per tag."""
    schema.validate_record(record)
    out = set()
    for spec in schema.fields:
        if "eq" not in spec.capabilities:
            continue
        for value in canonical_values(spec, record.fields[spec.name]):
            out.add(Keyword(spec.name, value))
    return out


# --- leakage taxonomy -------------------------------------------------------


class Level(enum.IntEnum):
    STRUCTURE = 1
    IDENTIFIER = 2
    PREDICATE = 3
    EQUALITY = 4
    ORDER = 5


class Operation(str, enum.Enum):
    INIT = "Init"
    QUERY = "Query"
    UPDATE = "Update"
    REFRESH = "Refresh"


class LeakObject(str, enum.Enum):
    DATA_ITEMS = "DataItems"
    QUERIES = "Queries"
    RESPONSES = "Responses"


class Role(str, enum.Enum):
    PROVIDER = "Provider"
    QUERIER = "Querier"
    SERVER = "Server"


@dataclass(frozen=True)
class LeakageEvent:
    operation: Operation
    object: LeakObject
    level: Level
    observer: Role = Role.SERVER
    detail: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "operation", Operation(self.operation))
        object.__setattr__(self, "object", LeakObject(self.object))
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "observer", Role(self.observer))

    @property
    def kind(self) -> tuple[Operation, LeakObject, Level, Role]:
        return (self.operation, self.object, self.level, self.observer)

    def __str__(self) -> str:
        text = f"{self.operation.value}/{self.object.value}/{self.level.name.title()}/{self.observer.value}"
        return f"{text}: {self.detail}" if self.detail else text


class LeakageProfile:
    """Append-only log of leakage occurrences.

    Events are occurrences rather than a set: recording the same event twice
    counts twice, which keeps volume-style reasoning possible.
    """

    def __init__(self, events: Iterable[LeakageEvent] = ()) -> None:
        self._events: list[LeakageEvent] = list(events)
        self._lock = threading.Lock()

    def record(self, event: LeakageEvent) -> "LeakageProfile":
        with self._lock:
            self._events.append(event)
        return self

    def extend(self, events: Iterable[LeakageEvent]) -> "LeakageProfile":
        with self._lock:
            self._events.extend(events)
        return self

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[LeakageEvent]:
        return iter(list(self._events))

    def select(
        self,
        operation: Operation | None = None,
        observer: Role | None = None,
        obj: LeakObject | None = None,
    ) -> list[LeakageEvent]:
        return [
            e
            for e in list(self._events)
            if (operation is None or e.operation is operation)
            and (observer is None or e.observer is observer)
            and (obj is None or e.object is obj)
        ]

    def max_level(
        self,
        operation: Operation | None = None,
        observer: Role | None = None,
        obj: LeakObject | None = None,
    ) -> Level | None:
        levels = [e.level for e in self.select(operation, observer, obj)]
        return max(levels) if levels else None

    def kinds(self, operation: Operation | None = None) -> set[tuple[Operation, LeakObject, Level, Role]]:
        return {e.kind for e in self.select(operation)}

    def summary(self) -> Counter:
        return Counter(e.kind for e in list(self._events))


def record_leakage(profile: LeakageProfile, event: LeakageEvent) -> LeakageProfile:
    return profile.record(event)


# --- combiner notation -------------------------------------------------------


@dataclass(frozen=True)
class CombinerParams:
    """Size parameters of the query combiners.

    k: clauses in a Boolean query, beta: max keywords per record,
    ell: max neighbours of a value, m: field domain size, r: result count,
    kappa: gram length, rho: query-string length, alpha: max padded string
    length, d: number of records.
    """

    k: int = 1
    beta: int = 1
    ell: int = 1
    m: int = 1
    r: int = 1
    kappa: int = 1
    rho: int = 1
    alpha: int = 1
    d: int = 1

    def __post_init__(self) -> None:
        for name in ("k", "beta", "ell", "m", "r", "kappa", "rho", "alpha", "d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.alpha < self.kappa:
            raise ValueError("alpha must be >= kappa")

    def require_rho_at_least_kappa(self) -> None:
        if self.kappa > self.rho:
            raise ValueError("this combiner needs kappa <= rho")

    @classmethod
    def parse(cls, text: str) -> "CombinerParams":
        """Parse the ``k,beta,ell,m,kappa,alpha`` command-line form."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 6:
            raise ValueError("expected six comma-separated values k,beta,ell,m,kappa,alpha")
        k, beta, ell, m, kappa, alpha = (int(p) for p in parts)
        return cls(k=k, beta=beta, ell=ell, m=m, kappa=kappa, rho=max(kappa, 1), alpha=alpha)

