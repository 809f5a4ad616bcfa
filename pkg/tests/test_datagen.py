import io

import numpy as np
import pytest
from scipy import stats

from vaultquery.datagen import (
    FrequencyTable,
    TableError,
    census_schema,
    gen_queries,
    gen_records,
    load_tables,
)
from vaultquery.harness import oracle_eval


def test_bundled_tables():
    t = load_tables()
    assert len(t.last_name.values) == 100 and len(t.female.values) == 100 and len(t.male.values) == 100
    assert len(t.state.values) == 51
    assert [int(v) for v in t.age.values] == list(range(106))


def test_table_validation():
    with pytest.raises(TableError):
        FrequencyTable(("a", "b"), (0.5, 0.4))
    with pytest.raises(TableError):
        FrequencyTable(("a", "a"), (0.5, 0.5))
    with pytest.raises(TableError):
        FrequencyTable.from_csv(io.StringIO("name,p\nx,1\n"))
    t = FrequencyTable(("x", "y"), (0.25, 0.75))
    assert FrequencyTable.from_csv(io.StringIO(t.to_csv())) == t


def test_records_valid_and_reproducible():
    schema = census_schema()
    a, b = gen_records(300, seed=4), gen_records(300, seed=4)
    assert a == b and a != gen_records(300, seed=5)
    for r in a:
        schema.validate_record(r)
    t = load_tables()
    for r in a:
        names = t.male.values if r.fields["gender"] == "male" else t.female.values
        assert r.fields["first_name"] in names


def test_marginal_goodness_of_fit():
    t = load_tables()
    recs = gen_records(20_000, seed=1)
    counts = {}
    for r in recs:
        counts[r.fields["state"]] = counts.get(r.fields["state"], 0) + 1
    observed = np.array([counts.get(v, 0) for v in t.state.values])
    expected = np.array(t.state.probabilities) * len(recs)
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_query_generator_invariants():
    recs = gen_records(500, seed=2)
    schema = census_schema()
    qs = gen_queries(recs, 200, seed=3)
    assert {q.b for q in qs} == {0, 1}
    for q in qs:
        assert len(q.query.children) == 3 and q.query.children[0].field == "last_name"
        hits = oracle_eval(q.query, recs, schema)
        assert (len(hits) >= 1) if q.b == 0 else (not hits)
        assert q.matches == bool(hits)
    assert [q.query for q in gen_queries(recs, 50, seed=3)] == [q.query for q in qs[:50]]
    with pytest.raises(ValueError):
        gen_queries([], 1)
