"""Client and server roles wired together over the encrypted multimap.

:class:`ProtectedDatabase` holds the client key and the server state in one
process. The server side is the :class:`~vaultquery.sse.EncryptedIndex`, the
:class:`~vaultquery.sse.EncryptedStore` and the
:class:`~vaultquery.sse.ServerTranscript` of everything the server saw. The
client side compiles queries, derives tokens, resolves cells and fetches
records by alias.

Concurrency: one writer (insert, delete, refresh) or many concurrent
readers (queries), enforced with a readers-writer lock.
"""

from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import sse
from .combiners import (
    CompiledQuery,
    Empty,
    EqCall,
    IndexingRecipe,
    Intersect,
    Plan,
    RangeCall,
    SmallRangeCall,
    Union,
    compile_query,
    rank_keyword,
    slot_keyword,
)
from .crypto import RandomSource
from .model import Keyword, LeakageProfile, Operation, Record, Schema
from .query import Query, parse
from .ranges import range_keyword


class StaleIndexError(RuntimeError):
    """Small-domain range structures are out of date until the next refresh."""


class RWLock:
    """Readers-writer lock that lets a waiting writer block new readers."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._waiting = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            self._waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


@dataclass
class QueryResult:
    ids: set[int]
    compiled: CompiledQuery
    session: int
    tokens: int = 0
    probes: int = 0
    transcript_bytes: int = 0
    records: list[Record] = field(default_factory=list)


class ProtectedDatabase:
    """A searchable encrypted database over one schema.

    Args:
        schema: Field layout and capabilities; decides the extra keywords.
        master: 32-byte client master key.
        index: Existing server index, or None for an empty database.
        store: Existing record store matching ``index``.
        rng: Byte source for salts, nonces and side addresses.
        transcript: Server transcript to append to (a fresh one by default).
    """

    def __init__(
        self,
        schema: Schema,
        master: bytes,
        index: sse.EncryptedIndex | None = None,
        store: sse.EncryptedStore | None = None,
        rng: RandomSource | None = None,
        transcript: sse.ServerTranscript | None = None,
    ) -> None:
        self.schema = schema
        self.recipe = IndexingRecipe(schema)
        self._master = master
        self._rng = rng or os.urandom
        self.transcript = transcript if transcript is not None else sse.ServerTranscript()
        self.profile = LeakageProfile()
        self._lock = RWLock()
        if index is None:
            index, store, profile = sse.build_from_postings([], [], master, self._rng)
            self.profile.extend(profile)
            sse.log_init(self.transcript, index, store)
        elif store is None:
            raise ValueError("an existing index needs its record store")
        self.index = index
        self.store = store
        self.keys = sse.IndexKeys.derive(master, index.salt)

    @classmethod
    def build(
        cls,
        schema: Schema,
        records: Iterable[Record],
        master: bytes,
        rng: RandomSource | None = None,
        transcript: sse.ServerTranscript | None = None,
    ) -> "ProtectedDatabase":
        """Init: encrypt every record and its keywords in one upload."""
        rng = rng or os.urandom
        records = list(records)
        recipe = IndexingRecipe(schema)
        postings = [(kw, r.id) for r in records for kw in recipe.keywords(r)]
        postings.extend(recipe.global_postings(records))
        index, store, profile = sse.build_from_postings(postings, records, master, rng)
        db = cls(schema, master, index, store, rng, transcript)
        db.profile.extend(profile)
        sse.log_init(db.transcript, index, store)
        return db

    @classmethod
    def open(cls, schema: Schema, master: bytes, index_path: str | Path, store_path: str | Path, **kwargs) -> "ProtectedDatabase":
        return cls(schema, master, sse.EncryptedIndex.load(index_path), sse.EncryptedStore.load(store_path), **kwargs)

    def save(self, index_path: str | Path, store_path: str | Path) -> None:
        with self._lock.read():
            self.index.save(index_path)
            self.store.save(store_path)

    def __len__(self) -> int:
        return len(self.store)

    @property
    def stale(self) -> bool:
        """True when updates since the last Init/Refresh sit in the side index."""
        return bool(self.index.side)

    # --- queries --------------------------------------------------------------

    def compile(self, query: Query | str) -> CompiledQuery:
        if isinstance(query, str):
            query = parse(query)
        return compile_query(query, self.recipe)

    def query(self, query: Query | str, fetch: bool = True) -> QueryResult:
        """Run one query; ``fetch`` also retrieves and decrypts the records."""
        compiled = self.compile(query)
        with self._lock.read():
            session = self.transcript.begin()
            before = len(self.transcript)
            result = QueryResult(set(), compiled, session)
            result.ids = self._execute(compiled.plan, session, result)
            if fetch:
                result.records = self._fetch(sorted(result.ids), session)
            new = self.transcript.entries_for(session, before)
        result.transcript_bytes = sum(len(e.data) for e in new)
        self.profile.extend(compiled.declared_leakage)
        self.profile.extend(sse.declared_events({e.kind for e in new}, "query transcript"))
        return result

    def search_keyword(self, keyword: Keyword) -> set[int]:
        """A single base equality call (no compilation)."""
        return self.query_plan(EqCall(keyword)).ids

    def query_plan(self, plan: Plan) -> QueryResult:
        compiled = CompiledQuery(plan, (), (), ())
        with self._lock.read():
            session = self.transcript.begin()
            before = len(self.transcript)
            result = QueryResult(set(), compiled, session)
            result.ids = self._execute(plan, session, result)
            new = self.transcript.entries_for(session, before)
        result.transcript_bytes = sum(len(e.data) for e in new)
        self.profile.extend(sse.declared_events({e.kind for e in new}, "query transcript"))
        return result

    def _eq(self, keyword: Keyword, session: int, result: QueryResult) -> set[int]:
        stats = sse.SearchStats()
        cells = sse.server_search(self.index, sse.trapdoor(keyword, self.keys), self.transcript, session, stats)
        result.tokens += 1
        result.probes += stats.total
        return sse.client_resolve(cells, self.keys)

    def _execute(self, plan: Plan, session: int, result: QueryResult) -> set[int]:
        if isinstance(plan, EqCall):
            return self._eq(plan.keyword, session, result)
        if isinstance(plan, RangeCall):
            out: set[int] = set()
            for s, e in plan.space.cover(plan.lo, plan.hi):
                out |= self._eq(range_keyword(plan.space.name, s, e), session, result)
            return out
        if isinstance(plan, SmallRangeCall):
            return self._small_range(plan, session, result)
        if isinstance(plan, Union):
            out = set()
            for child in plan.children:
                out |= self._execute(child, session, result)
            return out
        if isinstance(plan, Intersect):
            sets = [self._execute(child, session, result) for child in plan.children]
            return set.intersection(*sets)
        if isinstance(plan, Empty):
            return set()
        raise TypeError(f"not a plan node: {plan!r}")

    def _small_range(self, plan: SmallRangeCall, session: int, result: QueryResult) -> set[int]:
        if self.stale:
            raise StaleIndexError("small-domain range index is stale; refresh first")
        spec = self.schema[plan.field]
        low = self._eq(rank_keyword(spec, plan.lo), session, result)
        high = self._eq(rank_keyword(spec, plan.hi), session, result)
        if len(low) != 1 or len(high) != 1:
            raise sse.AuthenticationError("rank entry missing or duplicated")
        smaller = next(iter(low)) >> 32
        larger = next(iter(high)) & 0xFFFFFFFF
        out: set[int] = set()
        for position in range(smaller, len(self.store) - larger):
            out |= self._eq(slot_keyword(plan.field, position), session, result)
        return out

    def _fetch(self, ids: list[int], session: int) -> list[Record]:
        out = []
        for record_id in ids:
            alias = sse.record_alias(record_id, self.keys)
            ct = self.store.get(alias)
            self.transcript.add(session, Operation.QUERY, "fetch", alias)
            if ct is None:
                raise sse.AuthenticationError("store has no entry for a matched record")
            out.append(sse.open_record(alias, ct, self.keys))
        return out

    def fetch(self, ids: Iterable[int]) -> list[Record]:
        with self._lock.read():
            return self._fetch(sorted(ids), self.transcript.begin())

    # --- updates --------------------------------------------------------------

    def insert(self, record: Record) -> None:
        self.schema.validate_record(record)
        with self._lock.write():
            events = sse.insert(self.index, self.store, record, self.keys, self.recipe.keywords, self._rng, self.transcript)
        self.profile.extend(events)

    def delete(self, record_id: int) -> None:
        with self._lock.write():
            events = sse.delete(self.index, self.store, record_id, self.keys, self.recipe.keywords, self._rng, self.transcript)
        self.profile.extend(events)

    def refresh(self) -> None:
        """Rebuild under fresh sub-keys, folding the side index into the main one."""
        with self._lock.write():
            index, store, profile = sse.refresh(
                self.index, self.store, self._master, self.recipe.keywords, self._rng, self.recipe.global_postings
            )
            self.index, self.store = index, store
            self.keys = sse.IndexKeys.derive(self._master, index.salt)
            sse.log_init(self.transcript, index, store, Operation.REFRESH)
        self.profile.extend(profile)

    def records(self) -> list[Record]:
        """Client-side decryption of the whole store (no transcript entry)."""
        with self._lock.read():
            return sse.decrypt_store(self.store, self.keys)
