"""Query AST, its s-expression syntax, and direct plaintext evaluation.

Syntax::

    (eq name smith)
    (range age 20 30)                  ; inclusive, add :lo-open / :hi-open
    (and (eq last_name smith) (eq state CA))
    (or (eq state CA) (eq state NY))
    (not (eq state CA))
    (substring address "test")         ; optional :start or :end anchor
    (wildcard address "tes_str" :start)
    (near age 40)                      ; proximity
    (stem word running)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Union

from .model import FieldType, Record, Schema, SchemaError, canonical_values, fold_text
from .stemmer import stem as porter_stem

PLACEHOLDER = "_"
ANCHORS = (None, "start", "end")


class QuerySyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Eq:
    field: str
    value: Any


@dataclass(frozen=True)
class Range:
    field: str
    lo: int
    hi: int
    lo_inclusive: bool = True
    hi_inclusive: bool = True

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"range lo {self.lo} > hi {self.hi}")

    def bounds(self) -> tuple[int, int]:
        """Closed integer bounds; may be empty (lo > hi) after exclusion."""
        lo = self.lo if self.lo_inclusive else self.lo + 1
        hi = self.hi if self.hi_inclusive else self.hi - 1
        return lo, hi


@dataclass(frozen=True)
class And:
    children: tuple["Query", ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple["Query", ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


@dataclass(frozen=True)
class Not:
    child: "Query"


@dataclass(frozen=True)
class Substring:
    field: str
    pattern: str
    anchor: str | None = None

    def __post_init__(self) -> None:
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")
        if not self.pattern:
            raise ValueError("empty substring pattern")


@dataclass(frozen=True)
class Wildcard:
    field: str
    pattern: str
    anchor: str | None = None

    def __post_init__(self) -> None:
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")
        if PLACEHOLDER not in self.pattern:
            raise ValueError("wildcard pattern needs at least one placeholder")


@dataclass(frozen=True)
class Proximity:
    field: str
    value: int


@dataclass(frozen=True)
class Stem:
    field: str
    word: str


Query = Union[Eq, Range, And, Or, Not, Substring, Wildcard, Proximity, Stem]


# --- plaintext semantics ---------------------------------------------------


def _text(record: Record, schema: Schema, name: str) -> bytes:
    spec = schema[name]
    if spec.type is not FieldType.TEXT:
        raise SchemaError(f"field {name} is not text")
    return canonical_values(spec, record.fields[name])[0]


def _int(record: Record, schema: Schema, name: str) -> int:
    spec = schema[name]
    if spec.type is not FieldType.INTEGER:
        raise SchemaError(f"field {name} is not an integer field")
    return record.fields[name]


def wildcard_regex(pattern: str, anchor: str | None) -> re.Pattern[bytes]:
    body = b".".join(re.escape(part) for part in fold_text(pattern).split(PLACEHOLDER.encode()))
    if anchor == "start":
        body = b"^" + body
    elif anchor == "end":
        body = body + b"$"
    return re.compile(body, re.DOTALL)


def evaluate(query: Query, record: Record, schema: Schema) -> bool:
    """Does ``record`` satisfy ``query``? Total over every node kind."""
    if isinstance(query, Eq):
        spec = schema[query.field]
        have = canonical_values(spec, record.fields[query.field])
        if spec.type is FieldType.TAGS:
            want = canonical_values(spec, [query.value])
        else:
            want = canonical_values(spec, query.value)
        return want[0] in have
    if isinstance(query, Range):
        lo, hi = query.bounds()
        return lo <= _int(record, schema, query.field) <= hi
    if isinstance(query, And):
        return all(evaluate(c, record, schema) for c in query.children)
    if isinstance(query, Or):
        return any(evaluate(c, record, schema) for c in query.children)
    if isinstance(query, Not):
        return not evaluate(query.child, record, schema)
    if isinstance(query, Substring):
        text = _text(record, schema, query.field)
        pattern = fold_text(query.pattern)
        if query.anchor == "start":
            return text.startswith(pattern)
        if query.anchor == "end":
            return text.endswith(pattern)
        return pattern in text
    if isinstance(query, Wildcard):
        return wildcard_regex(query.pattern, query.anchor).search(_text(record, schema, query.field)) is not None
    if isinstance(query, Proximity):
        spec = schema[query.field]
        return abs(_int(record, schema, query.field) - query.value) <= spec.radius
    if isinstance(query, Stem):
        text = _text(record, schema, query.field).decode("utf-8")
        return porter_stem(text) == porter_stem(fold_text(query.word).decode("utf-8"))
    raise TypeError(f"not a query node: {query!r}")


def fields_of(query: Query) -> set[str]:
    if isinstance(query, (And, Or)):
        return set().union(*(fields_of(c) for c in query.children))
    if isinstance(query, Not):
        return fields_of(query.child)
    return {query.field}


# --- s-expressions -----------------------------------------------------------

_TOKEN = re.compile(r'\s*(?:(\()|(\))|"((?:[^"\\]|\\.)*)"|([^\s()"]+))')


def _tokenize(text: str) -> list[tuple[str, Any]]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise QuerySyntaxError(f"unexpected input at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()
        if m.group(1):
            out.append(("(", None))
        elif m.group(2):
            out.append((")", None))
        elif m.group(3) is not None:
            out.append(("str", re.sub(r"\\(.)", r"\1", m.group(3))))
        elif m.group(4) is not None:
            out.append(("atom", m.group(4)))
    return out


def _atom_value(kind: str, token: Any) -> Any:
    if kind == "str":
        return token
    if re.fullmatch(r"-?\d+", token):
        return int(token)
    return token


def _read(tokens: list[tuple[str, Any]], i: int) -> tuple[Any, int]:
    if i >= len(tokens):
        raise QuerySyntaxError("unexpected end of query")
    kind, tok = tokens[i]
    if kind == "(":
        items = []
        i += 1
        while True:
            if i >= len(tokens):
                raise QuerySyntaxError("unbalanced parentheses")
            if tokens[i][0] == ")":
                return items, i + 1
            item, i = _read(tokens, i)
            items.append(item)
    if kind == ")":
        raise QuerySyntaxError("unexpected ')'")
    return (kind, tok), i + 1


def _flags(args: list[Any]) -> tuple[list[Any], set[str]]:
    plain, flags = [], set()
    for a in args:
        if isinstance(a, tuple) and a[0] == "atom" and str(a[1]).startswith(":"):
            flags.add(a[1][1:])
        else:
            plain.append(a)
    return plain, flags


def _scalar(item: Any) -> Any:
    if isinstance(item, list):
        raise QuerySyntaxError("expected a value, got a sub-expression")
    return _atom_value(*item)


def _name(item: Any) -> str:
    value = _scalar(item)
    if not isinstance(value, str):
        raise QuerySyntaxError(f"expected a field name, got {value!r}")
    return value


def _build(expr: Any) -> Query:
    if not isinstance(expr, list) or not expr:
        raise QuerySyntaxError("a query is a parenthesised form")
    head = _scalar(expr[0])
    args, flags = _flags(expr[1:])
    anchor = "start" if "start" in flags else "end" if "end" in flags else None
    try:
        if head == "eq" and len(args) == 2:
            return Eq(_name(args[0]), _scalar(args[1]))
        if head == "range" and len(args) == 3:
            lo, hi = _scalar(args[1]), _scalar(args[2])
            if not isinstance(lo, int) or not isinstance(hi, int):
                raise QuerySyntaxError("range bounds must be integers")
            return Range(_name(args[0]), lo, hi, "lo-open" not in flags, "hi-open" not in flags)
        if head in ("and", "or") and len(args) >= 2:
            children = tuple(_build(a) for a in args)
            return And(children) if head == "and" else Or(children)
        if head == "not" and len(args) == 1:
            return Not(_build(args[0]))
        if head == "substring" and len(args) == 2:
            return Substring(_name(args[0]), str(_scalar(args[1])), anchor)
        if head == "wildcard" and len(args) == 2:
            return Wildcard(_name(args[0]), str(_scalar(args[1])), anchor)
        if head == "near" and len(args) == 2:
            return Proximity(_name(args[0]), int(_scalar(args[1])))
        if head == "stem" and len(args) == 2:
            return Stem(_name(args[0]), str(_scalar(args[1])))
    except ValueError as exc:
        if isinstance(exc, QuerySyntaxError):
            raise
        raise QuerySyntaxError(str(exc)) from exc
    raise QuerySyntaxError(f"bad form ({head} ...) with {len(args)} arguments")


def parse(text: str) -> Query:
    tokens = _tokenize(text)
    expr, end = _read(tokens, 0)
    if end != len(tokens):
        raise QuerySyntaxError("trailing input after query")
    return _build(expr)


def _quote(value: Any) -> str:
    text = str(value)
    if isinstance(value, int) or (re.fullmatch(r"[^\s()\"]+", text) and not re.fullmatch(r"-?\d+", text) and not text.startswith(":")):
        return text
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_sexpr(query: Query) -> str:
    if isinstance(query, Eq):
        return f"(eq {query.field} {_quote(query.value)})"
    if isinstance(query, Range):
        flags = ("" if query.lo_inclusive else " :lo-open") + ("" if query.hi_inclusive else " :hi-open")
        return f"(range {query.field} {query.lo} {query.hi}{flags})"
    if isinstance(query, (And, Or)):
        head = "and" if isinstance(query, And) else "or"
        return f"({head} " + " ".join(to_sexpr(c) for c in query.children) + ")"
    if isinstance(query, Not):
        return f"(not {to_sexpr(query.child)})"
    if isinstance(query, (Substring, Wildcard)):
        head = "substring" if isinstance(query, Substring) else "wildcard"
        anchor = f" :{query.anchor}" if query.anchor else ""
        return f'({head} {query.field} {_quote(query.pattern)}{anchor})'
    if isinstance(query, Proximity):
        return f"(near {query.field} {query.value})"
    if isinstance(query, Stem):
        return f"(stem {query.field} {_quote(query.word)})"
    raise TypeError(f"not a query node: {query!r}")
