"""Black-box query combiners over a base equality scheme.

``compile_query`` turns a query AST into a plan built only from base calls
(``EqCall``, ``RangeCall``, ``SmallRangeCall``) joined by client-side
``Union`` / ``Intersect``. Each combiner needs extra keywords inserted at
Init; :class:`IndexingRecipe` produces them, padded with per-record dummy
keywords so every record contributes a fixed count per capability:

==============  ==========================================
capability      extra keywords per record
==============  ==========================================
tuples          C(beta, k)  (fewer when fields are required)
range           log2(m) + 1
proximity       ell + 1 (value, neighbours, dummies)
stem            1
grams           alpha - kappa + 1
pos_grams       alpha - kappa + 1
suffix_grams    alpha - kappa + 1
gram_range      (alpha' - kappa + 1) * (log2(m_gram) + 1)
lsh             number of hash tables
small_range     1 (plus one rank entry per domain value)
==============  ==========================================

For ``gram_range`` the padded length is ``alpha' = max_len + kappa - 1`` so
every start position of a short pattern has a gram.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Union as TypingUnion

from .grams import PAD_BYTE, GramSpace, kgram_extract, pattern_grams
from .lsh import BitSamplingLSH
from .model import (
    CombinerParams,
    FieldSpec,
    FieldType,
    Keyword,
    LeakageEvent,
    LeakObject,
    Level,
    Operation,
    Record,
    Role,
    Schema,
    SchemaError,
    canonical_values,
    canonicalize_keyword,
    extract_keywords,
    fold_text,
)
from .query import And, Eq, Not, Or, PLACEHOLDER, Proximity, Query, Range, Stem, Substring, Wildcard
from .ranges import log2, padded_domain, range_cover, range_keyword, range_keywords
from .stemmer import stem as porter_stem


class CapabilityError(ValueError):
    """The index was not built with the recipe this query needs."""


# --- plans --------------------------------------------------------------------


@dataclass(frozen=True)
class RangeSpace:
    """An ordered keyword space searchable through canonical ranges."""

    name: str
    m: int
    offset: int = 0
    grams: GramSpace | None = None

    def encode(self, value) -> int:
        if self.grams is not None:
            return self.grams.encode(value)
        return int(value) - self.offset

    def cover(self, lo, hi) -> list[tuple[int, int]]:
        a, b = self.encode(lo), self.encode(hi)
        if a > b:
            return []
        return range_cover(a, b + 1, self.m)

    def keywords(self, value) -> list[Keyword]:
        return [range_keyword(self.name, s, e) for s, e in range_keywords(self.encode(value), self.m)]


@dataclass(frozen=True)
class EqCall:
    keyword: Keyword


@dataclass(frozen=True)
class RangeCall:
    """Inclusive range ``[lo, hi]`` in ``space``; runs as an OR of canonical ranges."""

    space: RangeSpace
    lo: object
    hi: object


@dataclass(frozen=True)
class SmallRangeCall:
    field: str
    lo: int
    hi: int


@dataclass(frozen=True)
class Union:
    children: tuple["Plan", ...]


@dataclass(frozen=True)
class Intersect:
    children: tuple["Plan", ...]


@dataclass(frozen=True)
class Empty:
    pass


Plan = TypingUnion[EqCall, RangeCall, SmallRangeCall, Union, Intersect, Empty]


def _join(kind, children: list) -> "Plan":
    children = [c for c in children]
    if not children:
        return Empty()
    if len(children) == 1:
        return children[0]
    return kind(tuple(children))


def base_calls(plan: Plan) -> list:
    """Leaf calls in plan order (range calls are not expanded)."""
    if isinstance(plan, (Union, Intersect)):
        return [leaf for child in plan.children for leaf in base_calls(child)]
    if isinstance(plan, Empty):
        return []
    return [plan]


def eq_calls(plan: Plan) -> list[EqCall]:
    """Equality calls a plan issues, with range calls expanded into their covers."""
    out = []
    for leaf in base_calls(plan):
        if isinstance(leaf, EqCall):
            out.append(leaf)
        elif isinstance(leaf, RangeCall):
            out.extend(EqCall(range_keyword(leaf.space.name, s, e)) for s, e in leaf.space.cover(leaf.lo, leaf.hi))
    return out


# --- keyword families ------------------------------------------------------------


def _pos_bytes(pos: int) -> bytes:
    return pos.to_bytes(2, "big", signed=True)


def gram_keyword(field_name: str, gram: bytes, kappa: int) -> Keyword:
    return Keyword(f"{field_name}#gram{kappa}", gram)


def pos_gram_keyword(field_name: str, pos: int, gram: bytes, kappa: int) -> Keyword:
    kind = "pos" if pos > 0 else "sfx"
    return Keyword(f"{field_name}#{kind}{kappa}", _pos_bytes(pos) + gram)


def stem_keyword(field_name: str, word: str) -> Keyword:
    return Keyword(f"{field_name}#stem", porter_stem(fold_text(word).decode("utf-8")).encode("utf-8"))


def near_keyword(spec: FieldSpec, value: int) -> Keyword:
    return Keyword(f"{spec.name}#near", value.to_bytes(spec.width, "big"))


def rank_keyword(spec: FieldSpec, value: int) -> Keyword:
    return Keyword(f"{spec.name}#rank", value.to_bytes(spec.width, "big"))


def slot_keyword(field_name: str, position: int) -> Keyword:
    return Keyword(f"{field_name}#slot", position.to_bytes(8, "big"))


def dummy_keyword(field_name: str, capability: str, record_id: int, i: int) -> Keyword:
    return Keyword(f"{field_name}#{capability}#pad", record_id.to_bytes(8, "big") + i.to_bytes(4, "big"))


def tuple_keyword(fields: tuple[str, ...], values: list[bytes]) -> Keyword:
    body = b"".join(len(v).to_bytes(2, "big") + v for v in values)
    return Keyword("tuple:" + ",".join(fields), body)


def describe_keyword(kw: Keyword) -> str:
    name, _, kind = kw.field.partition("#")
    if kind.startswith(("pos", "sfx")) and not kind.endswith("pad"):
        pos = int.from_bytes(kw.value[:2], "big", signed=True)
        return f'({pos},"{kw.value[2:].decode("latin-1")}")'
    if kind.startswith("gram") and not kind.endswith("pad"):
        return '"' + kw.value.decode("latin-1") + '"'
    if kind == "range":
        level, start = kw.value[0], int.from_bytes(kw.value[1:], "big")
        return f"{name}[{start},{start + (1 << level)})"
    return f"{kw.field}={kw.value!r}"


def describe(plan: Plan) -> str:
    """Compact rendering, e.g. ``AND[(1,"tes"),(5,"str")]``."""
    if isinstance(plan, EqCall):
        return describe_keyword(plan.keyword)
    if isinstance(plan, RangeCall):
        if plan.space.grams is not None:
            return f'Range["{plan.lo}","{plan.hi}"]'
        return f"Range[{plan.lo},{plan.hi}]"
    if isinstance(plan, SmallRangeCall):
        return f"SmallRange[{plan.lo},{plan.hi}]"
    if isinstance(plan, Intersect):
        return "AND[" + ",".join(describe(c) for c in plan.children) + "]"
    if isinstance(plan, Union):
        return "OR[" + ",".join(describe(c) for c in plan.children) + "]"
    return "EMPTY"


# --- string combiners -------------------------------------------------------------


def substring_fixed(field_name: str, pattern: str, kappa: int) -> EqCall:
    text = fold_text(pattern)
    if len(text) != kappa:
        raise ValueError(f"fixed-length substring needs exactly kappa={kappa} characters")
    return EqCall(gram_keyword(field_name, text, kappa))


def substring_short(pattern: str, kappa: int, space: GramSpace) -> tuple[str, str]:
    """Gram interval holding every gram that starts with ``pattern``."""
    if len(pattern) > kappa:
        raise ValueError(f"pattern longer than kappa={kappa}")
    return space.prefix_bounds(fold_text(pattern).decode("latin-1"))


def anchored_terms(pattern: str, kappa: int, anchor: str = "start") -> list[tuple[int, bytes]]:
    text = fold_text(pattern)
    grams = pattern_grams(text, kappa)
    if anchor == "start":
        return [(i + 1, g) for i, g in enumerate(grams)]
    count = len(grams)
    return [(-(count - i), g) for i, g in enumerate(grams)]


def wildcard_terms(pattern: str, kappa: int, anchor: str = "start") -> list[tuple[int, bytes]]:
    """Positional grams covering the literal runs of a wildcard pattern.

    Every literal run must hold at least ``kappa`` characters and the pattern
    must begin and end with a literal, so each placeholder sits between real
    characters.
    """
    text = fold_text(pattern)
    ph = PLACEHOLDER.encode()
    if text.startswith(ph) or text.endswith(ph):
        raise ValueError("wildcard patterns must begin and end with a literal run")
    terms: list[tuple[int, bytes]] = []
    offset = 0
    for run in text.split(ph):
        if run:
            if len(run) < kappa:
                raise ValueError(f"literal run {run!r} shorter than kappa={kappa}")
            for j, g in enumerate(pattern_grams(run, kappa)):
                terms.append((offset + j, g))
            offset += len(run)
        offset += 1
    if not terms:
        raise ValueError("wildcard pattern has no literal characters")
    rho = len(text)
    if anchor == "start":
        return [(t + 1, g) for t, g in terms]
    return [(-(rho - t - kappa + 1), g) for t, g in terms]


def _terms_plan(field_name: str, terms, kappa: int) -> Plan:
    return _join(Intersect, [EqCall(pos_gram_keyword(field_name, p, g, kappa)) for p, g in terms])


def substring_anchored(field_name: str, pattern: str, kappa: int, anchor: str = "start") -> Plan:
    if len(fold_text(pattern)) < kappa:
        raise ValueError(f"anchored substring needs at least kappa={kappa} characters")
    return _terms_plan(field_name, anchored_terms(pattern, kappa, anchor), kappa)


def _unanchored(field_name: str, terms: list[tuple[int, bytes]], kappa: int, alpha: int) -> Plan:
    branches = []
    for shift in range(alpha - kappa + 1):
        branches.append(_terms_plan(field_name, [(p + shift, g) for p, g in terms], kappa))
    return _join(Union, branches)


def substring_general(field_name: str, pattern: str, kappa: int, alpha: int) -> Plan:
    """OR over every start offset of the anchored conjunction."""
    text = fold_text(pattern)
    if len(text) > alpha:
        return Empty()
    if len(text) < kappa:
        raise ValueError(f"substring needs at least kappa={kappa} characters")
    return _unanchored(field_name, anchored_terms(pattern, kappa, "start"), kappa, alpha)


def wildcard(field_name: str, pattern: str, kappa: int, alpha: int, anchor: str | None = "start") -> Plan:
    if anchor is None:
        if len(fold_text(pattern)) > alpha:
            return Empty()
        return _unanchored(field_name, wildcard_terms(pattern, kappa, "start"), kappa, alpha)
    return _terms_plan(field_name, wildcard_terms(pattern, kappa, anchor), kappa)


# --- other combiners ----------------------------------------------------------


def eq_via_range(space: RangeSpace, value: int) -> RangeCall:
    return RangeCall(space, value, value)


def or_compose(plans: Iterable[Plan]) -> Union:
    plans = tuple(plans)
    if len(plans) < 2:
        raise ValueError("a disjunction needs at least two clauses")
    return Union(plans)


def negation(space: RangeSpace, lo: int, hi: int, value_lo: int, value_hi: int) -> Plan:
    """Complement of ``[value_lo, value_hi]`` within the domain ``[lo, hi]``."""
    if value_lo < lo or value_hi > hi:
        raise ValueError("negated value outside the field domain")
    parts = []
    if value_lo > lo:
        parts.append(RangeCall(space, lo, value_lo - 1))
    if value_hi < hi:
        parts.append(RangeCall(space, value_hi + 1, hi))
    return _join(Union, parts)


def and_tuples(record: Record, schema: Schema, k: int | None = None) -> list[Keyword]:
    """Tuple keywords for one record: one per admissible k-subset of fields."""
    spec = schema.tuples
    if spec is None:
        raise CapabilityError("schema has no tuple specification")
    k = spec.k if k is None else k
    values = {}
    for name in spec.fields:
        field_spec = schema[name]
        vals = canonical_values(field_spec, record.fields[name])
        if len(vals) != 1:
            raise SchemaError(f"tuple field {name} must be single-valued")
        values[name] = vals[0]
    out = []
    for combo in tuple_combinations(spec.fields, k, spec.required):
        out.append(tuple_keyword(combo, [values[f] for f in combo]))
    return out


def tuple_combinations(fields: tuple[str, ...], k: int, required: tuple[str, ...] = ()) -> list[tuple[str, ...]]:
    optional = [f for f in sorted(fields) if f not in required]
    out = []
    for extra in itertools.combinations(optional, k - len(required)):
        out.append(tuple(sorted(set(required) | set(extra))))
    return sorted(out)


def tuple_query(schema: Schema, clauses: list[Eq]) -> EqCall:
    spec = schema.tuples
    if spec is None:
        raise CapabilityError("schema has no tuple specification")
    if len(clauses) != spec.k:
        raise ValueError(f"tuple query needs exactly k={spec.k} clauses")
    names = [c.field for c in clauses]
    if len(set(names)) != len(names):
        raise ValueError("tuple query fields duplicated")
    combo = tuple(sorted(names))
    if combo not in tuple_combinations(spec.fields, spec.k, spec.required):
        raise CapabilityError(f"no tuple index over {combo}")
    by_field = {c.field: canonicalize_keyword(schema, c.field, c.value).value for c in clauses}
    return EqCall(tuple_keyword(combo, [by_field[f] for f in combo]))


# --- recipe ------------------------------------------------------------------


@dataclass(frozen=True)
class StorageCost:
    row: int
    formula: str
    per_record: int


class IndexingRecipe:
    """Extra Init keywords per schema capability, padded to fixed counts."""

    def __init__(self, schema: Schema) -> None:
        self.schema = schema
        self._lsh = {
            f.name: BitSamplingLSH(bits=8 * f.width, tables=f.lsh_tables, samples=f.lsh_bits, seed=f.lsh_seed)
            for f in schema.fields
            if "lsh" in f.capabilities
        }

    def has(self, field_name: str, capability: str) -> bool:
        return capability in self.schema[field_name].capabilities

    def require(self, field_name: str, capability: str) -> FieldSpec:
        spec = self.schema[field_name]
        if capability not in spec.capabilities:
            raise CapabilityError(f"field {field_name} was not indexed for {capability}")
        return spec

    def range_space(self, field_name: str) -> RangeSpace:
        spec = self.schema[field_name]
        return RangeSpace(field_name, padded_domain(spec.hi - spec.lo + 1), offset=spec.lo)

    def gram_space(self, field_name: str) -> RangeSpace:
        spec = self.schema[field_name]
        grams = GramSpace(spec.alphabet, spec.kappa, padded=True)
        return RangeSpace(f"{field_name}#gram", grams.m, grams=grams)

    def lsh(self, field_name: str) -> BitSamplingLSH:
        self.require(field_name, "lsh")
        return self._lsh[field_name]

    def gram_range_alpha(self, spec: FieldSpec) -> int:
        return spec.max_len + spec.kappa - 1

    def expected_count(self, field_name: str, capability: str) -> int:
        spec = self.schema[field_name]
        if capability == "range":
            return log2(self.range_space(field_name).m) + 1
        if capability == "proximity":
            return 2 * spec.radius + 1
        if capability in ("stem", "small_range"):
            return 1
        if capability in ("grams", "pos_grams", "suffix_grams"):
            return spec.max_len - spec.kappa + 1
        if capability == "gram_range":
            return (self.gram_range_alpha(spec) - spec.kappa + 1) * (log2(self.gram_space(field_name).m) + 1)
        if capability == "lsh":
            return spec.lsh_tables
        if capability == "eq":
            return 1
        raise ValueError(f"unknown capability {capability}")

    def tuple_count(self) -> int:
        spec = self.schema.tuples
        if spec is None:
            return 0
        return comb(len(spec.fields) - len(spec.required), spec.k - len(spec.required))

    def _pad(self, real: Iterable[Keyword], count: int, spec: FieldSpec, capability: str, record_id: int) -> list[Keyword]:
        out = sorted(set(real))
        if len(out) > count:
            raise CapabilityError(f"{capability} on {spec.name}: {len(out)} keywords exceed the fixed count {count}")
        out.extend(dummy_keyword(spec.name, capability, record_id, i) for i in range(count - len(out)))
        return out

    def field_keywords(self, record: Record, spec: FieldSpec, capability: str) -> list[Keyword]:
        raw = record.fields[spec.name]
        count = self.expected_count(spec.name, capability) if capability not in ("eq",) else None
        if capability == "range":
            return self.range_space(spec.name).keywords(raw)
        if capability == "proximity":
            lo, hi = spec.lo, spec.hi
            real = [near_keyword(spec, v) for v in range(max(lo, raw - spec.radius), min(hi, raw + spec.radius) + 1)]
            return self._pad(real, count, spec, capability, record.id)
        if capability == "stem":
            return [stem_keyword(spec.name, raw)]
        if capability == "lsh":
            return self._lsh[spec.name].keywords(spec.name, raw)
        text = canonical_values(spec, raw)[0]
        if capability == "grams":
            grams = kgram_extract(text, spec.kappa, spec.max_len)
            return self._pad([gram_keyword(spec.name, g, spec.kappa) for g in grams], count, spec, capability, record.id)
        if capability == "pos_grams":
            return [pos_gram_keyword(spec.name, p, g, spec.kappa) for p, g in kgram_extract(text, spec.kappa, spec.max_len, positional=True)]
        if capability == "suffix_grams":
            return [
                pos_gram_keyword(spec.name, p, g, spec.kappa)
                for p, g in kgram_extract(text, spec.kappa, spec.max_len, positional=True, from_end=True)
            ]
        if capability == "gram_range":
            space = self.gram_space(spec.name)
            alphabet = set(spec.alphabet.encode("latin-1")) | {PAD_BYTE[0]}
            if not set(text) <= alphabet:
                raise SchemaError(f"field {spec.name}: value has symbols outside the gram alphabet")
            grams = set(kgram_extract(text, spec.kappa, self.gram_range_alpha(spec)))
            real = [kw for g in grams for kw in space.keywords(g)]
            return self._pad(real, count, spec, capability, record.id)
        return []

    def extra_keywords(self, record: Record) -> dict[str, list[Keyword]]:
        """Extra keywords by ``field:capability`` (and ``tuples``)."""
        self.schema.validate_record(record)
        out = {}
        for spec in self.schema.fields:
            for capability in spec.capabilities:
                if capability in ("eq", "small_range"):
                    continue
                out[f"{spec.name}:{capability}"] = self.field_keywords(record, spec, capability)
        if self.schema.tuples is not None:
            out["tuples"] = and_tuples(record, self.schema)
        return out

    def keywords(self, record: Record) -> list[Keyword]:
        """Every keyword a record is posted under (base plus extras)."""
        out = list(extract_keywords(record, self.schema))
        for kws in self.extra_keywords(record).values():
            out.extend(kws)
        return out

    def global_postings(self, records: list[Record]) -> list[tuple[Keyword, int]]:
        """Small-domain range structures: rank entries and sorted slots."""
        out: list[tuple[Keyword, int]] = []
        for spec in self.schema.fields:
            if "small_range" not in spec.capabilities:
                continue
            ordered = sorted(records, key=lambda r: (r.fields[spec.name], r.id))
            values = [r.fields[spec.name] for r in ordered]
            d = len(values)
            smaller = 0
            i = 0
            for a in range(spec.lo, spec.hi + 1):
                while i < d and values[i] < a:
                    i += 1
                smaller = i
                j = i
                while j < d and values[j] == a:
                    j += 1
                larger = d - j
                out.append((rank_keyword(spec, a), (smaller << 32) | larger))
            for position, record in enumerate(ordered):
                out.append((slot_keyword(spec.name, position), record.id))
        return out

    def storage_costs(self) -> list[StorageCost]:
        out = []
        rows = {"range": 7, "proximity": 5, "stem": 4, "grams": 9, "gram_range": 10, "pos_grams": 11, "suffix_grams": 11, "lsh": 5, "small_range": 6}
        formulas = {
            "range": "log m + 1",
            "proximity": "ell + 1",
            "stem": "1",
            "grams": "alpha - kappa + 1",
            "gram_range": "(alpha - kappa + 1)(log m + 1)",
            "pos_grams": "alpha - kappa + 1",
            "suffix_grams": "alpha - kappa + 1",
            "lsh": "tables",
            "small_range": "1",
        }
        for spec in self.schema.fields:
            for cap in spec.capabilities:
                if cap in rows:
                    out.append(StorageCost(rows[cap], f"{spec.name}:{cap} = {formulas[cap]}", self.expected_count(spec.name, cap)))
        if self.schema.tuples is not None:
            out.append(StorageCost(3, "tuples = C(beta, k)", self.tuple_count()))
        return out


# --- compilation --------------------------------------------------------------

ROW_LEAKAGE = {
    1: "same as the underlying range query",
    2: "identifiers of records matching each clause",
    3: "same as one equality query",
    4: "identifiers of records sharing a stem",
    5: "identifiers of neighbouring value pairs",
    6: "client learns result positions; server sees rank and slot lookups",
    7: "distributional information from canonical-range result sizes",
    8: "same as a disjunction of ranges",
    9: "identifiers of records sharing grams",
    10: "range leakage over the gram space",
    11: "ids of records with grams at the same positions; clause count reveals pattern length",
    12: "ids of records with grams at the same positions; clause count reveals pattern length",
    13: "ids of records with grams at the same positions; clause count reveals pattern length",
    14: "ids of records with grams at the same positions; clause count reveals pattern length",
}

BASE_EQ_LEAKAGE = (
    LeakageEvent(Operation.QUERY, LeakObject.QUERIES, Level.EQUALITY, Role.SERVER, "search pattern: token repetition"),
    LeakageEvent(Operation.QUERY, LeakObject.RESPONSES, Level.IDENTIFIER, Role.SERVER, "access pattern: result cells and records"),
)


@dataclass(frozen=True)
class CompiledQuery:
    plan: Plan
    declared_leakage: tuple[LeakageEvent, ...]
    storage_cost: tuple[StorageCost, ...]
    rows: tuple[int, ...]
    exact: bool = True


@dataclass
class _Compiler:
    recipe: IndexingRecipe
    rows: set[int] = field(default_factory=set)
    exact: bool = True

    @property
    def schema(self) -> Schema:
        return self.recipe.schema

    def visit(self, q: Query) -> Plan:
        if isinstance(q, Eq):
            return self.eq(q)
        if isinstance(q, Range):
            return self.range(q)
        if isinstance(q, And):
            return self.conj(q)
        if isinstance(q, Or):
            self.rows.add(2)
            return or_compose(self.visit(c) for c in q.children)
        if isinstance(q, Not):
            return self.neg(q)
        if isinstance(q, Stem):
            self.recipe.require(q.field, "stem")
            self.rows.add(4)
            return EqCall(stem_keyword(q.field, q.word))
        if isinstance(q, Proximity):
            return self.near(q)
        if isinstance(q, Substring):
            return self.substring(q)
        if isinstance(q, Wildcard):
            return self.wild(q)
        raise TypeError(f"not a query node: {q!r}")

    def eq(self, q: Eq) -> Plan:
        spec = self.schema[q.field]
        if "eq" in spec.capabilities:
            return EqCall(canonicalize_keyword(self.schema, q.field, q.value))
        if "range" in spec.capabilities or "small_range" in spec.capabilities:
            canonicalize_keyword(self.schema, q.field, q.value)
            self.rows.add(1)
            return self.range(Range(q.field, q.value, q.value))
        raise CapabilityError(f"field {q.field} has no equality or range index")

    def range(self, q: Range) -> Plan:
        spec = self.schema[q.field]
        if spec.type is not FieldType.INTEGER:
            raise CapabilityError(f"range over non-integer field {q.field}")
        lo, hi = q.bounds()
        lo, hi = max(lo, spec.lo), min(hi, spec.hi)
        if "range" in spec.capabilities:
            self.rows.add(7)
            if lo > hi:
                return Empty()
            return RangeCall(self.recipe.range_space(q.field), lo, hi)
        if "small_range" in spec.capabilities:
            self.rows.add(6)
            if lo > hi:
                return Empty()
            return SmallRangeCall(q.field, lo, hi)
        raise CapabilityError(f"field {q.field} was not indexed for range queries")

    def conj(self, q: And) -> Plan:
        spec = self.schema.tuples
        if spec is not None and all(isinstance(c, Eq) for c in q.children):
            try:
                plan = tuple_query(self.schema, list(q.children))
            except (ValueError, CapabilityError):
                pass
            else:
                self.rows.add(3)
                return plan
        return Intersect(tuple(self.visit(c) for c in q.children))

    def neg(self, q: Not) -> Plan:
        child = q.child
        if isinstance(child, (Eq, Range)) and self.recipe.has(child.field, "range"):
            spec = self.schema[child.field]
            if isinstance(child, Eq):
                canonicalize_keyword(self.schema, child.field, child.value)
                vlo = vhi = child.value
            else:
                vlo, vhi = child.bounds()
                if vlo > vhi:
                    return self.range(Range(child.field, spec.lo, spec.hi))
                vlo, vhi = max(vlo, spec.lo), min(vhi, spec.hi)
                if vlo > vhi:
                    return self.range(Range(child.field, spec.lo, spec.hi))
            self.rows.update((8, 7))
            return negation(self.recipe.range_space(child.field), spec.lo, spec.hi, vlo, vhi)
        raise CapabilityError("negation needs an equality or range clause over a range-indexed field")

    def near(self, q: Proximity) -> Plan:
        spec = self.schema[q.field]
        if "proximity" in spec.capabilities:
            if not spec.lo <= q.value <= spec.hi:
                raise ValueError(f"proximity value {q.value} outside the domain of {q.field}")
            self.rows.add(5)
            return EqCall(near_keyword(spec, q.value))
        if "lsh" in spec.capabilities:
            self.rows.add(5)
            self.exact = False
            return or_compose(EqCall(kw) for kw in self.recipe.lsh(q.field).keywords(q.field, q.value))
        raise CapabilityError(f"field {q.field} was not indexed for proximity")

    def substring(self, q: Substring) -> Plan:
        spec = self.schema[q.field]
        if spec.type is not FieldType.TEXT:
            raise CapabilityError(f"substring over non-text field {q.field}")
        text = fold_text(q.pattern)
        rho, kappa, caps = len(text), spec.kappa, spec.capabilities
        if rho > spec.max_len:
            return Empty()
        if q.anchor is None:
            if rho == kappa and "grams" in caps:
                self.rows.add(9)
                return substring_fixed(q.field, q.pattern, kappa)
            if rho < kappa and "gram_range" in caps:
                self.rows.add(10)
                space = self.recipe.gram_space(q.field)
                lo, hi = substring_short(q.pattern, kappa, space.grams)
                return RangeCall(space, lo, hi)
            if rho >= kappa and "pos_grams" in caps:
                self.rows.add(12)
                return substring_general(q.field, q.pattern, kappa, spec.max_len)
            raise CapabilityError(f"no index on {q.field} supports unanchored substrings of length {rho}")
        need = "pos_grams" if q.anchor == "start" else "suffix_grams"
        if rho < kappa or need not in caps:
            raise CapabilityError(f"no index on {q.field} supports {q.anchor}-anchored substrings of length {rho}")
        self.rows.add(11)
        return substring_anchored(q.field, q.pattern, kappa, q.anchor)

    def wild(self, q: Wildcard) -> Plan:
        spec = self.schema[q.field]
        if spec.type is not FieldType.TEXT:
            raise CapabilityError(f"wildcard over non-text field {q.field}")
        need = "suffix_grams" if q.anchor == "end" else "pos_grams"
        self.recipe.require(q.field, need)
        self.rows.add(14 if q.anchor is None else 13)
        return wildcard(q.field, q.pattern, spec.kappa, spec.max_len, q.anchor)


def compile_query(query: Query, recipe: IndexingRecipe) -> CompiledQuery:
    compiler = _Compiler(recipe)
    plan = compiler.visit(query)
    leakage = []
    if eq_calls(plan) or any(isinstance(c, SmallRangeCall) for c in base_calls(plan)):
        leakage.extend(BASE_EQ_LEAKAGE)
    for row in sorted(compiler.rows):
        leakage.append(LeakageEvent(Operation.QUERY, LeakObject.RESPONSES, Level.IDENTIFIER, Role.SERVER, f"combiner {row}: {ROW_LEAKAGE[row]}"))
    if 6 in compiler.rows:
        leakage.append(
            LeakageEvent(Operation.QUERY, LeakObject.RESPONSES, Level.ORDER, Role.QUERIER, "result positions in value order (no blinding)")
        )
    costs = [c for c in recipe.storage_costs() if c.row in compiler.rows]
    return CompiledQuery(plan, tuple(leakage), tuple(costs), tuple(sorted(compiler.rows)), compiler.exact)


def cost_table(params: CombinerParams) -> list[tuple[int, str, int | str, int]]:
    """Per-row ``(row, name, base calls per query, extra keywords per record)``.

    Range-based rows count equality calls in the worst-case cover.
    """
    p = params
    lg = log2(padded_domain(p.m))
    grams = p.alpha - p.kappa + 1
    clauses = max(p.rho - p.kappa + 1, 1)
    return [
        (1, "equality via range", 2 * lg, lg + 1),
        (2, "disjunction", p.k, 0),
        (3, "conjunction via tuples", 1, comb(p.beta, p.k)),
        (4, "stemming", 1, 1),
        (5, "proximity", 1, p.ell + 1),
        (6, "small-domain range", f"2 + r ({2 + p.r})", 1),
        (7, "range", 2 * lg, lg + 1),
        (8, "negation", 4 * lg, lg + 1),
        (9, "substring, rho = kappa", 1, grams),
        (10, "substring, rho < kappa", 2 * lg, grams * (lg + 1)),
        (11, "anchored substring", clauses, grams),
        (12, "substring", grams * clauses, grams),
        (13, "anchored wildcard", clauses, grams),
        (14, "wildcard", grams * clauses, grams),
    ]
