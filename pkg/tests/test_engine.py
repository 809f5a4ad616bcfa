import random

import pytest

from helpers import random_query, random_records, random_schema
from vaultquery.crypto import seeded_rng
from vaultquery.engine import ProtectedDatabase, StaleIndexError
from vaultquery.harness import oracle_eval, two_stream_race
from vaultquery.model import Keyword, Level, Operation, Record, Role
from vaultquery.query import Eq, Range, parse

MASTER = bytes(range(32))


@pytest.fixture
def setup(backend):
    rng = random.Random(11)
    schema = random_schema(rng)
    records = random_records(rng, schema, 80)
    db = ProtectedDatabase.build(schema, records, MASTER, seeded_rng(1))
    return rng, schema, records, db


def test_every_row_matches_oracle(setup):
    rng, schema, records, db = setup
    for row in range(1, 15):
        for _ in range(3):
            q = random_query(rng, row, schema, records)
            result = db.query(q)
            assert result.ids == oracle_eval(q, records, schema), (row, q)
            assert sorted(r.id for r in result.records) == sorted(result.ids)
            assert result.transcript_bytes > 0 or not result.ids


def test_updates_then_refresh(setup):
    rng, schema, records, db = setup
    new = random_records(rng, schema, 10, start=1000)
    for r in new:
        db.insert(r)
    db.delete(records[0].id)
    current = records[1:] + new
    assert db.stale
    for row in (1, 2, 3, 7, 9, 11):
        q = random_query(rng, row, schema, current)
        assert db.query(q).ids == oracle_eval(q, current, schema)
    with pytest.raises(StaleIndexError):
        db.query(Range("score", 0, 10))
    db.refresh()
    assert not db.stale
    q = Range("score", 3, 20)
    assert db.query(q).ids == oracle_eval(q, current, schema)
    assert sorted(r.id for r in db.records()) == sorted(r.id for r in current)


def test_save_and_open(setup, tmp_path):
    _, schema, records, db = setup
    db.save(tmp_path / "i", tmp_path / "s")
    again = ProtectedDatabase.open(schema, MASTER, tmp_path / "i", tmp_path / "s")
    q = "(range age 0 50)"
    assert again.query(q).ids == db.query(q).ids == oracle_eval(parse(q), records, schema)


def test_profile_tracks_query_leakage(setup):
    _, _, _, db = setup
    assert db.profile.max_level(Operation.INIT, Role.SERVER) is Level.STRUCTURE
    db.query(Eq("kind", "alpha"))
    assert db.profile.max_level(Operation.QUERY, Role.SERVER) is Level.EQUALITY


def test_search_keyword_and_unknown(setup):
    _, _, records, db = setup
    assert db.search_keyword(Keyword("nothing", b"")) == set()
    assert db.query(Eq("kind", "alpha"), fetch=False).records == []


def test_empty_database():
    schema = random_schema(random.Random(0))
    db = ProtectedDatabase(schema, MASTER)
    assert len(db) == 0 and db.query(Eq("kind", "alpha")).ids == set()
    db.insert(Record(5, random_records(random.Random(1), schema, 1)[0].fields))
    assert len(db) == 1


def test_concurrent_reads_see_whole_inserts(setup):
    rng, schema, _, db = setup
    new = [Record(5000 + i, {**r.fields, "kind": "alpha"}) for i, r in enumerate(random_records(rng, schema, 30))]
    ok, answers = two_stream_race(db, Eq("kind", "alpha"), new, rounds=20)
    assert ok and len(answers) > 20
