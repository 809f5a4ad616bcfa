"""Legacy baseline: deterministic-encryption column index.

Each indexed column maps ``det_encrypt(keyword)`` to the record ids holding
that value, kept sorted by ciphertext so lookups are binary searches over an
ordinary sorted map. Ids are in the clear, as an unmodified server indexes
them. Ciphertext equality is plaintext equality, so the at-rest index is an
unlabeled histogram of every column.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .crypto import det_encrypt, derive_key
from .model import (
    Keyword,
    LeakageEvent,
    LeakageProfile,
    LeakObject,
    Level,
    Operation,
    Record,
    Role,
    Schema,
    canonical_values,
)
from .sse import DuplicateRecordError, IndexFormatError

DET_MAGIC = b"VQDT"
DET_VERSION = 1


def det_key(master: bytes) -> bytes:
    return derive_key(master, b"legacy-det")


def det_token(master: bytes, keyword: Keyword) -> bytes:
    return det_encrypt(det_key(master), keyword.to_bytes())


@dataclass
class DetColumn:
    ciphertexts: list[bytes] = field(default_factory=list)
    postings: list[list[int]] = field(default_factory=list)

    def add(self, ct: bytes, record_id: int) -> None:
        i = bisect.bisect_left(self.ciphertexts, ct)
        if i < len(self.ciphertexts) and self.ciphertexts[i] == ct:
            self.postings[i].append(record_id)
        else:
            self.ciphertexts.insert(i, ct)
            self.postings.insert(i, [record_id])

    def lookup(self, ct: bytes) -> list[int]:
        i = bisect.bisect_left(self.ciphertexts, ct)
        if i < len(self.ciphertexts) and self.ciphertexts[i] == ct:
            return list(self.postings[i])
        return []

    def histogram(self) -> dict[bytes, int]:
        return {ct: len(ids) for ct, ids in zip(self.ciphertexts, self.postings)}


@dataclass
class DetIndex:
    columns: dict[str, DetColumn] = field(default_factory=dict)
    ids: set[int] = field(default_factory=set)

    def histogram(self, column: str) -> dict[bytes, int]:
        return self.columns[column].histogram()

    def to_bytes(self) -> bytes:
        parts = [DET_MAGIC, struct.pack("<HI", DET_VERSION, len(self.columns))]
        for name in sorted(self.columns):
            col = self.columns[name]
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(col.ciphertexts)))
            for ct, ids in zip(col.ciphertexts, col.postings):
                parts.append(struct.pack("<H", len(ct)) + ct + struct.pack("<I", len(ids)))
                parts.append(struct.pack(f"<{len(ids)}Q", *ids))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DetIndex":
        if data[:4] != DET_MAGIC or len(data) < 10:
            raise IndexFormatError("not a VQDT index")
        version, ncols = struct.unpack_from("<HI", data, 4)
        if version != DET_VERSION:
            raise IndexFormatError(f"unsupported version {version}")
        pos, index = 10, cls()
        try:
            for _ in range(ncols):
                (nlen,) = struct.unpack_from("<H", data, pos)
                name = data[pos + 2 : pos + 2 + nlen].decode("utf-8")
                pos += 2 + nlen
                (count,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                col = DetColumn()
                for _ in range(count):
                    (clen,) = struct.unpack_from("<H", data, pos)
                    ct = data[pos + 2 : pos + 2 + clen]
                    pos += 2 + clen
                    (nids,) = struct.unpack_from("<I", data, pos)
                    pos += 4
                    ids = list(struct.unpack_from(f"<{nids}Q", data, pos))
                    pos += 8 * nids
                    col.ciphertexts.append(ct)
                    col.postings.append(ids)
                    index.ids.update(ids)
                if col.ciphertexts != sorted(col.ciphertexts):
                    raise IndexFormatError("column not sorted")
                index.columns[name] = col
        except (struct.error, UnicodeDecodeError) as exc:
            raise IndexFormatError(f"truncated or corrupt DET index: {exc}") from exc
        if pos != len(data):
            raise IndexFormatError("trailing bytes")
        return index

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())


def det_build(records: Iterable[Record], master: bytes, schema: Schema) -> tuple[DetIndex, LeakageProfile]:
    index = DetIndex()
    for record in records:
        det_insert(index, record, master, schema)
    profile = LeakageProfile(
        [
            LeakageEvent(
                Operation.INIT,
                LeakObject.DATA_ITEMS,
                Level.EQUALITY,
                Role.SERVER,
                "equal ciphertexts per column: unlabeled value histogram",
            )
        ]
    )
    return index, profile


def det_insert(index: DetIndex, record: Record, master: bytes, schema: Schema) -> None:
    """Inserts go straight into the main sorted map."""
    if record.id in index.ids:
        raise DuplicateRecordError(f"duplicate record id {record.id}")
    schema.validate_record(record)
    key = det_key(master)
    index.ids.add(record.id)
    for spec in schema.fields:
        if "eq" not in spec.capabilities:
            continue
        col = index.columns.setdefault(spec.name, DetColumn())
        for value in canonical_values(spec, record.fields[spec.name]):
            col.add(det_encrypt(key, Keyword(spec.name, value).to_bytes()), record.id)


def det_query(index: DetIndex, ciphertext: bytes, column: str | None = None) -> list[int]:
    """Exact-match lookup; searches every column when none is named."""
    columns = [index.columns[column]] if column is not None else index.columns.values()
    for col in columns:
        hit = col.lookup(ciphertext)
        if hit:
            return hit
    return []


LEGACY_QUERY_LEAKAGE = (
    LeakageEvent(Operation.QUERY, LeakObject.QUERIES, Level.EQUALITY, Role.SERVER, "repeated ciphertext tokens"),
    LeakageEvent(Operation.QUERY, LeakObject.RESPONSES, Level.IDENTIFIER, Role.SERVER, "record ids in the clear"),
)
