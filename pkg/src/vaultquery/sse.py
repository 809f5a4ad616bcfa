"""Encrypted multimap from keywords to record-id postings.

Layout
------
Every keyword ``w`` has a search token ``t = PRF(K_token, w)``. The i-th
posting of ``w`` lives at main-index address ``PRF(t, "m" || i)``; addresses
of all keywords are mixed in one dictionary, so Init reveals only the total
posting count. Postings added after Init go to a side list whose entries are
``nonce || PRF(t, "s" || nonce)[:16]``; the server finds them with a linear
scan. Cells are authenticated, so a tampering server is detected.

Records themselves live in an :class:`EncryptedStore` keyed by a PRF alias of
the record id; the store supports alias lookup only.

Every sub-key is derived from the master key and a per-epoch salt stored in
the index header. ``refresh`` draws a new salt, so all addresses, aliases and
cells change.

File formats (little-endian)::

    index: "VQIX" | version u16 | salt[16] | N u64 |
           N x (section u8 | addr_len u16 | addr | cell_len u16 | cell)
    store: "VQST" | version u16 | count u64 |
           count x (alias_len u16 | alias | ct_len u32 | ct)
"""

from __future__ import annotations

import json
import os
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from . import kernels
from .crypto import AuthenticationError, RandomSource, derive_key, prf, rand_decrypt, rand_encrypt
from .model import Keyword, LeakageEvent, LeakageProfile, LeakObject, Level, Operation, Record, Role

MAGIC = b"VQIX"
STORE_MAGIC = b"VQST"
VERSION = 1
SALT_BYTES = 16
MAIN, SIDE = 0, 1
OP_ADD, OP_DEL = 0, 1
MAX_POSTINGS = 1 << 40

Extractor = Callable[[Record], Iterable[Keyword]]


class IndexFormatError(ValueError):
    """A serialized index or store is malformed."""


class DuplicateRecordError(ValueError):
    pass


@dataclass(frozen=True)
class IndexKeys:
    """Per-epoch sub-keys derived from the master key and the index salt."""

    salt: bytes
    token: bytes
    cell: bytes
    mac: bytes
    alias: bytes
    payload: bytes

    @classmethod
    def derive(cls, master: bytes, salt: bytes) -> "IndexKeys":
        if len(salt) != SALT_BYTES:
            raise ValueError("index salts are 16 bytes")
        return cls(
            salt=salt,
            token=derive_key(master, b"token/" + salt),
            cell=derive_key(master, b"cell/" + salt),
            mac=derive_key(master, b"mac/" + salt),
            alias=derive_key(master, b"alias/" + salt),
            payload=derive_key(master, b"payload/" + salt),
        )


# --- server-visible state -------------------------------------------------


@dataclass
class EncryptedIndex:
    salt: bytes
    main: dict[bytes, bytes] = field(default_factory=dict)
    side: list[tuple[bytes, bytes]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.main) + len(self.side)

    def addresses(self) -> set[bytes]:
        return set(self.main) | {addr for addr, _ in self.side}

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<H", VERSION), self.salt, struct.pack("<Q", self.n)]
        for section, items in ((MAIN, sorted(self.main.items())), (SIDE, self.side)):
            for addr, cell in items:
                parts.append(struct.pack("<BH", section, len(addr)))
                parts.append(addr)
                parts.append(struct.pack("<H", len(cell)))
                parts.append(cell)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedIndex":
        view = memoryview(data)
        if len(view) < 30 or bytes(view[:4]) != MAGIC:
            raise IndexFormatError("not a VQIX index")
        (version,) = struct.unpack_from("<H", view, 4)
        if version != VERSION:
            raise IndexFormatError(f"unsupported index version {version}")
        salt = bytes(view[6:22])
        (n,) = struct.unpack_from("<Q", view, 22)
        if n > MAX_POSTINGS or n * 5 > len(view):
            raise IndexFormatError("posting count inconsistent with file size")
        index = cls(salt=salt)
        pos = 30
        for _ in range(n):
            if pos + 3 > len(view):
                raise IndexFormatError("truncated entry header")
            section, alen = struct.unpack_from("<BH", view, pos)
            pos += 3
            if section not in (MAIN, SIDE) or alen != kernels.ADDRESS_BYTES:
                raise IndexFormatError("bad entry section or address length")
            if pos + alen + 2 > len(view):
                raise IndexFormatError("truncated address")
            addr = bytes(view[pos : pos + alen])
            pos += alen
            (clen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            if clen != kernels.CELL_BYTES or pos + clen > len(view):
                raise IndexFormatError("bad or truncated cell")
            cell = bytes(view[pos : pos + clen])
            pos += clen
            if section == MAIN:
                if addr in index.main:
                    raise IndexFormatError("duplicate main-index address")
                index.main[addr] = cell
            else:
                index.side.append((addr, cell))
        if pos != len(view):
            raise IndexFormatError("trailing bytes after last entry")
        return index

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "EncryptedIndex":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class EncryptedStore:
    entries: dict[bytes, bytes] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, alias: object) -> bool:
        return alias in self.entries

    def get(self, alias: bytes) -> bytes | None:
        return self.entries.get(alias)

    def to_bytes(self) -> bytes:
        parts = [STORE_MAGIC, struct.pack("<HQ", VERSION, len(self.entries))]
        for alias, ct in sorted(self.entries.items()):
            parts.append(struct.pack("<H", len(alias)))
            parts.append(alias)
            parts.append(struct.pack("<I", len(ct)))
            parts.append(ct)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedStore":
        view = memoryview(data)
        if len(view) < 14 or bytes(view[:4]) != STORE_MAGIC:
            raise IndexFormatError("not a VQST store")
        version, count = struct.unpack_from("<HQ", view, 4)
        if version != VERSION:
            raise IndexFormatError(f"unsupported store version {version}")
        if count * 6 > len(view):
            raise IndexFormatError("entry count inconsistent with file size")
        store = cls()
        pos = 14
        for _ in range(count):
            if pos + 2 > len(view):
                raise IndexFormatError("truncated alias length")
            (alen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            if pos + alen + 4 > len(view):
                raise IndexFormatError("truncated alias")
            alias = bytes(view[pos : pos + alen])
            pos += alen
            (clen,) = struct.unpack_from("<I", view, pos)
            pos += 4
            if pos + clen > len(view):
                raise IndexFormatError("truncated record ciphertext")
            if alias in store.entries:
                raise IndexFormatError("duplicate alias")
            store.entries[alias] = bytes(view[pos : pos + clen])
            pos += clen
        if pos != len(view):
            raise IndexFormatError("trailing bytes after last record")
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "EncryptedStore":
        return cls.from_bytes(Path(path).read_bytes())


# --- transcript ---------------------------------------------------------------

# kind -> (operation, object, level): what each transcript element reveals.
TRANSCRIPT_LEAKAGE: dict[str, tuple[Operation, LeakObject, Level]] = {
    "init-index": (Operation.INIT, LeakObject.DATA_ITEMS, Level.STRUCTURE),
    "init-store": (Operation.INIT, LeakObject.DATA_ITEMS, Level.STRUCTURE),
    "token": (Operation.QUERY, LeakObject.QUERIES, Level.EQUALITY),
    "cell": (Operation.QUERY, LeakObject.RESPONSES, Level.IDENTIFIER),
    "fetch": (Operation.QUERY, LeakObject.RESPONSES, Level.IDENTIFIER),
    "update-cell": (Operation.UPDATE, LeakObject.DATA_ITEMS, Level.STRUCTURE),
    "update-record": (Operation.UPDATE, LeakObject.DATA_ITEMS, Level.STRUCTURE),
    "delete-record": (Operation.UPDATE, LeakObject.DATA_ITEMS, Level.IDENTIFIER),
    "refresh-index": (Operation.REFRESH, LeakObject.DATA_ITEMS, Level.STRUCTURE),
    "refresh-store": (Operation.REFRESH, LeakObject.DATA_ITEMS, Level.STRUCTURE),
}


@dataclass(frozen=True)
class TranscriptEntry:
    session: int
    operation: Operation
    kind: str
    data: bytes

    def to_json(self) -> dict:
        return {"session": self.session, "op": self.operation.value, "kind": self.kind, "data": self.data.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "TranscriptEntry":
        return cls(int(obj["session"]), Operation(obj["op"]), str(obj["kind"]), bytes.fromhex(obj["data"]))


class ServerTranscript:
    """Everything the server observes, in order, grouped into sessions.

    Init and Refresh are summarized (posting count, record ciphertext lengths)
    because the server keeps the full uploaded state anyway.
    """

    def __init__(self, entries: Iterable[TranscriptEntry] = ()) -> None:
        self.entries: list[TranscriptEntry] = list(entries)
        self._next = max((e.session for e in self.entries), default=-1) + 1
        self._lock = threading.Lock()
        self._bytes = sum(len(e.data) for e in self.entries)

    def begin(self) -> int:
        with self._lock:
            session = self._next
            self._next += 1
        return session

    def add(self, session: int, operation: Operation, kind: str, data: bytes) -> None:
        if kind not in TRANSCRIPT_LEAKAGE:
            raise ValueError(f"undeclared transcript kind {kind!r}")
        with self._lock:
            self.entries.append(TranscriptEntry(session, operation, kind, data))
            self._bytes += len(data)

    def entries_for(self, session: int, start: int = 0) -> list[TranscriptEntry]:
        """Entries of one session, scanning from position ``start``."""
        with self._lock:
            tail = self.entries[start:]
        return [e for e in tail if e.session == session]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TranscriptEntry]:
        return iter(self.entries)

    def kinds(self) -> set[str]:
        return {e.kind for e in self.entries}

    def total_bytes(self) -> int:
        return self._bytes

    def sessions(self) -> dict[int, list[TranscriptEntry]]:
        out: dict[int, list[TranscriptEntry]] = defaultdict(list)
        for e in self.entries:
            out[e.session].append(e)
        return dict(out)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json()) + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "ServerTranscript":
        return cls(TranscriptEntry.from_json(json.loads(line)) for line in text.splitlines() if line.strip())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ServerTranscript":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def declared_events(kinds: Iterable[str], detail: str = "") -> list[LeakageEvent]:
    return [LeakageEvent(*TRANSCRIPT_LEAKAGE[k], observer=Role.SERVER, detail=detail) for k in sorted(set(kinds))]


# --- protocol -----------------------------------------------------------------


def trapdoor(keyword: Keyword, keys: IndexKeys) -> bytes:
    """Search token. Deterministic: equal keywords give equal tokens."""
    return prf(keys.token, keyword.to_bytes())


def record_alias(record_id: int, keys: IndexKeys) -> bytes:
    return prf(keys.alias, record_id.to_bytes(8, "big"))


def seal_record(record: Record, keys: IndexKeys, rng: RandomSource | None = None) -> tuple[bytes, bytes]:
    alias = record_alias(record.id, keys)
    return alias, rand_encrypt(keys.payload, record.to_bytes(), aad=alias, rng=rng)


def open_record(alias: bytes, ct: bytes, keys: IndexKeys) -> Record:
    return Record.from_bytes(rand_decrypt(keys.payload, ct, aad=alias))


def build_from_postings(
    postings: Iterable[tuple[Keyword, int]],
    records: Iterable[Record],
    master: bytes,
    rng: RandomSource | None = None,
    salt: bytes | None = None,
) -> tuple[EncryptedIndex, EncryptedStore, LeakageProfile]:
    """Init from explicit ``(keyword, value)`` postings plus the record bodies."""
    rng = rng or os.urandom
    salt = salt if salt is not None else rng(SALT_BYTES)
    keys = IndexKeys.derive(master, salt)
    lists: dict[Keyword, list[tuple[int, int]]] = defaultdict(list)
    for kw, value in postings:
        lists[kw].append((OP_ADD, value))
    index = EncryptedIndex(salt=salt)
    main = index.main
    for kw, entries in lists.items():
        token = trapdoor(kw, keys)
        main.update(kernels.encrypt_postings(token, keys.cell, keys.mac, entries))
    store = EncryptedStore()
    seen = set()
    for record in records:
        if record.id in seen:
            raise DuplicateRecordError(f"duplicate record id {record.id}")
        seen.add(record.id)
        alias, ct = seal_record(record, keys, rng)
        store.entries[alias] = ct
    profile = LeakageProfile(
        [
            LeakageEvent(Operation.INIT, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, f"total posting count N={index.n}"),
            LeakageEvent(Operation.INIT, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, f"record ciphertext lengths (d={len(store)})"),
        ]
    )
    return index, store, profile


def build_index(
    records: Iterable[Record],
    master: bytes,
    extract: Extractor,
    rng: RandomSource | None = None,
    salt: bytes | None = None,
) -> tuple[EncryptedIndex, EncryptedStore, LeakageProfile]:
    records = list(records)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DuplicateRecordError("record ids must be unique")
    postings = ((kw, r.id) for r in records for kw in extract(r))
    return build_from_postings(postings, records, master, rng, salt)


def log_init(transcript: ServerTranscript, index: EncryptedIndex, store: EncryptedStore, operation=Operation.INIT) -> None:
    session = transcript.begin()
    prefix = "init" if operation is Operation.INIT else "refresh"
    transcript.add(session, operation, f"{prefix}-index", struct.pack("<Q", index.n))
    lengths = b"".join(struct.pack("<I", len(ct)) for _, ct in sorted(store.entries.items()))
    transcript.add(session, operation, f"{prefix}-store", lengths)


@dataclass
class SearchStats:
    main_probes: int = 0
    side_probes: int = 0

    @property
    def total(self) -> int:
        return self.main_probes + self.side_probes


def server_search(
    index: EncryptedIndex,
    token: bytes,
    transcript: ServerTranscript | None = None,
    session: int | None = None,
    stats: SearchStats | None = None,
) -> list[tuple[bytes, bytes]]:
    """Return every (address, cell) pair the token unlocks, main then side."""
    cells = kernels.probe_main(index.main, token)
    if stats is not None:
        stats.main_probes = len(cells) + 1
        stats.side_probes = len(index.side)
    if index.side:
        side = index.side
        cells.extend(side[i] for i in kernels.scan_side([a for a, _ in side], token))
    if transcript is not None:
        if session is None:
            session = transcript.begin()
        transcript.add(session, Operation.QUERY, "token", token)
        for addr, cell in cells:
            transcript.add(session, Operation.QUERY, "cell", addr + cell)
    return cells


def client_resolve(cells: Iterable[tuple[bytes, bytes]], keys: IndexKeys) -> set[int]:
    """Decrypt cells into record ids, applying side-index tombstones in order."""
    out: set[int] = set()
    for op, value in kernels.open_cells(keys.cell, keys.mac, list(cells)):
        if op == OP_ADD:
            out.add(value)
        elif op == OP_DEL:
            out.discard(value)
        else:
            raise AuthenticationError(f"unknown posting op {op}")
    return out


def _side_cells(keywords: Iterable[Keyword], value: int, op: int, keys: IndexKeys, rng: RandomSource) -> list[tuple[bytes, bytes]]:
    out = []
    for kw in keywords:
        token = trapdoor(kw, keys)
        addr = kernels.side_address(token, rng(kernels.SIDE_NONCE_BYTES))
        out.append((addr, kernels.seal_cell(keys.cell, keys.mac, addr, op, value)))
    return out


def insert(
    index: EncryptedIndex,
    store: EncryptedStore,
    record: Record,
    keys: IndexKeys,
    extract: Extractor,
    rng: RandomSource | None = None,
    transcript: ServerTranscript | None = None,
    postings: Iterable[tuple[Keyword, int]] = (),
) -> list[LeakageEvent]:
    """Add one record: postings go to the side index only."""
    rng = rng or os.urandom
    alias = record_alias(record.id, keys)
    if alias in store:
        raise DuplicateRecordError(f"record id {record.id} already present")
    cells = _side_cells(sorted(set(extract(record))), record.id, OP_ADD, keys, rng)
    for kw, value in postings:
        cells.extend(_side_cells([kw], value, OP_ADD, keys, rng))
    alias, ct = seal_record(record, keys, rng)
    index.side.extend(cells)
    store.entries[alias] = ct
    if transcript is not None:
        session = transcript.begin()
        for addr, cell in cells:
            transcript.add(session, Operation.UPDATE, "update-cell", addr + cell)
        transcript.add(session, Operation.UPDATE, "update-record", alias + struct.pack("<I", len(ct)))
    return [
        LeakageEvent(Operation.UPDATE, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, f"{len(cells)} new postings"),
        LeakageEvent(Operation.UPDATE, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, "new record ciphertext length"),
    ]


def delete(
    index: EncryptedIndex,
    store: EncryptedStore,
    record_id: int,
    keys: IndexKeys,
    extract: Extractor,
    rng: RandomSource | None = None,
    transcript: ServerTranscript | None = None,
) -> list[LeakageEvent]:
    """Remove a record: tombstone postings in the side index, store entry dropped."""
    rng = rng or os.urandom
    alias = record_alias(record_id, keys)
    ct = store.get(alias)
    if ct is None:
        raise KeyError(f"record id {record_id} not present")
    record = open_record(alias, ct, keys)
    cells = _side_cells(sorted(set(extract(record))), record_id, OP_DEL, keys, rng)
    index.side.extend(cells)
    del store.entries[alias]
    if transcript is not None:
        session = transcript.begin()
        for addr, cell in cells:
            transcript.add(session, Operation.UPDATE, "update-cell", addr + cell)
        transcript.add(session, Operation.UPDATE, "delete-record", alias)
    return [
        LeakageEvent(Operation.UPDATE, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, f"{len(cells)} tombstone postings"),
        LeakageEvent(Operation.UPDATE, LeakObject.DATA_ITEMS, Level.IDENTIFIER, Role.SERVER, "alias of the deleted record"),
    ]


def decrypt_store(store: EncryptedStore, keys: IndexKeys) -> list[Record]:
    return sorted((open_record(alias, ct, keys) for alias, ct in store.entries.items()), key=lambda r: r.id)


def refresh(
    index: EncryptedIndex,
    store: EncryptedStore,
    master: bytes,
    extract: Extractor,
    rng: RandomSource | None = None,
    global_postings: Callable[[list[Record]], Iterable[tuple[Keyword, int]]] | None = None,
) -> tuple[EncryptedIndex, EncryptedStore, LeakageProfile]:
    """Rebuild under a fresh salt; side postings and tombstones are folded in.

    ``global_postings`` adds postings that depend on the whole record set.
    """
    rng = rng or os.urandom
    keys = IndexKeys.derive(master, index.salt)
    records = decrypt_store(store, keys)
    salt = rng(SALT_BYTES)
    while salt == index.salt:
        salt = rng(SALT_BYTES)
    postings = [(kw, r.id) for r in records for kw in extract(r)]
    if global_postings is not None:
        postings.extend(global_postings(records))
    new_index, new_store, _ = build_from_postings(postings, records, master, rng, salt)
    profile = LeakageProfile(
        [
            LeakageEvent(Operation.REFRESH, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, f"total posting count N={new_index.n}"),
            LeakageEvent(Operation.REFRESH, LeakObject.DATA_ITEMS, Level.STRUCTURE, Role.SERVER, "record ciphertext lengths"),
        ]
    )
    return new_index, new_store, profile
