import random

import pytest
from hypothesis import given, settings, strategies as st

from vaultquery import sse
from vaultquery.crypto import AuthenticationError, seeded_rng
from vaultquery.model import Keyword, Level, Operation, Record

MASTER = bytes(range(32))


def kw(record):
    return [Keyword("color", record.fields["color"].encode()), Keyword("any", b"")]


def records(n, seed=0):
    rng = random.Random(seed)
    return [Record(i, {"color": rng.choice(["red", "green", "blue"])}) for i in range(n)]


def oracle(recs, color):
    return {r.id for r in recs if r.fields["color"] == color}


def search(index, keys, keyword, transcript=None):
    return sse.client_resolve(sse.server_search(index, sse.trapdoor(keyword, keys), transcript), keys)


def test_build_and_search(backend):
    recs = records(60)
    index, store, profile = sse.build_index(recs, MASTER, kw, seeded_rng(1))
    keys = sse.IndexKeys.derive(MASTER, index.salt)
    assert index.n == 120 and len(store) == 60
    for color in ("red", "green", "blue", "pink"):
        assert search(index, keys, Keyword("color", color.encode())) == oracle(recs, color)
    assert profile.max_level(Operation.INIT) is Level.STRUCTURE
    assert sse.decrypt_store(store, keys) == recs


def test_updates_and_tombstones(backend):
    recs = records(20)
    index, store, _ = sse.build_index(recs, MASTER, kw, seeded_rng(2))
    keys = sse.IndexKeys.derive(MASTER, index.salt)
    new = Record(100, {"color": "red"})
    sse.insert(index, store, new, keys, kw, seeded_rng(3))
    sse.delete(index, store, 0, keys, kw, seeded_rng(4))
    current = [r for r in recs if r.id != 0] + [new]
    assert search(index, keys, Keyword("color", b"red")) == oracle(current, "red")
    assert search(index, keys, Keyword("any", b"")) == {r.id for r in current}
    with pytest.raises(sse.DuplicateRecordError):
        sse.insert(index, store, new, keys, kw)
    with pytest.raises(KeyError):
        sse.delete(index, store, 0, keys, kw)


def test_refresh_changes_everything_but_answers():
    recs = records(30)
    index, store, _ = sse.build_index(recs, MASTER, kw, seeded_rng(5))
    keys = sse.IndexKeys.derive(MASTER, index.salt)
    sse.insert(index, store, Record(77, {"color": "blue"}), keys, kw, seeded_rng(6))
    new_index, new_store, _ = sse.refresh(index, store, MASTER, kw, seeded_rng(7))
    new_keys = sse.IndexKeys.derive(MASTER, new_index.salt)
    assert not new_index.side
    assert not index.addresses() & new_index.addresses()
    assert not set(store.entries) & set(new_store.entries)
    for color in ("red", "green", "blue"):
        assert search(new_index, new_keys, Keyword("color", color.encode())) == search(index, keys, Keyword("color", color.encode()))


def test_serialization_roundtrip(tmp_path):
    recs = records(10)
    index, store, _ = sse.build_index(recs, MASTER, kw, seeded_rng(8))
    keys = sse.IndexKeys.derive(MASTER, index.salt)
    sse.insert(index, store, Record(50, {"color": "red"}), keys, kw, seeded_rng(9))
    index.save(tmp_path / "i")
    store.save(tmp_path / "s")
    again, again_store = sse.EncryptedIndex.load(tmp_path / "i"), sse.EncryptedStore.load(tmp_path / "s")
    assert again == index and again_store == store


@settings(max_examples=60)
@given(st.integers(0, 400), st.integers(0, 255))
def test_corrupted_files_rejected_or_detected(cut, flip):
    index, store, _ = sse.build_index(records(4), MASTER, kw, seeded_rng(10))
    data = bytearray(index.to_bytes())
    pos = cut % len(data)
    truncated = bytes(data[:pos])
    with pytest.raises(sse.IndexFormatError):
        sse.EncryptedIndex.from_bytes(truncated)
    data[pos] ^= flip or 1
    try:
        tampered = sse.EncryptedIndex.from_bytes(bytes(data))
    except sse.IndexFormatError:
        return
    keys = sse.IndexKeys.derive(MASTER, tampered.salt)
    try:
        for color in ("red", "green", "blue"):
            search(tampered, keys, Keyword("color", color.encode()))
    except AuthenticationError:
        pass


def test_store_format_errors():
    store = sse.EncryptedStore({b"a" * 32: b"ct"})
    raw = store.to_bytes()
    assert sse.EncryptedStore.from_bytes(raw) == store
    for bad in (raw[:-1], raw + b"x", b"nope" + raw[4:]):
        with pytest.raises(sse.IndexFormatError):
            sse.EncryptedStore.from_bytes(bad)


def test_transcript_records_tokens_and_cells(tmp_path):
    recs = records(10)
    index, store, _ = sse.build_index(recs, MASTER, kw, seeded_rng(11))
    keys = sse.IndexKeys.derive(MASTER, index.salt)
    transcript = sse.ServerTranscript()
    got = search(index, keys, Keyword("color", b"red"), transcript)
    assert [e.kind for e in transcript].count("cell") == len(got)
    assert transcript.kinds() <= set(sse.TRANSCRIPT_LEAKAGE)
    transcript.save(tmp_path / "t.jsonl")
    assert sse.ServerTranscript.load(tmp_path / "t.jsonl").entries == transcript.entries
    with pytest.raises(ValueError):
        transcript.add(0, Operation.QUERY, "plaintext", b"")


def test_trapdoor_determinism():
    keys = sse.IndexKeys.derive(MASTER, bytes(16))
    a, b = Keyword("f", b"x"), Keyword("f", b"y")
    assert sse.trapdoor(a, keys) == sse.trapdoor(a, keys) != sse.trapdoor(b, keys)
    assert sse.trapdoor(a, sse.IndexKeys.derive(MASTER, bytes([1]) * 16)) != sse.trapdoor(a, keys)


def test_duplicate_ids_rejected():
    with pytest.raises(sse.DuplicateRecordError):
        sse.build_index([Record(1, {"color": "red"})] * 2, MASTER, kw)
