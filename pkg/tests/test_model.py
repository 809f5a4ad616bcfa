import pytest
from hypothesis import given, strategies as st

from vaultquery.model import (
    CombinerParams,
    FieldSpec,
    Keyword,
    LeakageEvent,
    LeakageProfile,
    LeakObject,
    Level,
    Operation,
    Record,
    Role,
    Schema,
    SchemaError,
    TupleSpec,
    canonicalize_keyword,
    decode_value,
    extract_keywords,
    fold_text,
    read_records,
    record_leakage,
    write_records,
)


@pytest.fixture
def schema():
    return Schema(
        fields=(
            FieldSpec("name", "text", ("eq",), max_len=20),
            FieldSpec("age", "integer", ("eq",), lo=0, hi=105, width=1),
            FieldSpec("state", "enum", ("eq",), values=("CA", "NY")),
            FieldSpec("tags", "tags", ("eq",)),
            FieldSpec("notes", "text", ()),
        )
    )


def test_canonical_text_is_case_folded(schema):
    assert canonicalize_keyword(schema, "name", "Smith") == canonicalize_keyword(schema, "name", "SMITH")
    assert canonicalize_keyword(schema, "name", "Smith").value == b"smith"


def test_canonical_integer_is_fixed_width_big_endian(schema):
    assert canonicalize_keyword(schema, "age", 3).value == b"\x03"
    assert canonicalize_keyword(schema, "age", 3).value < canonicalize_keyword(schema, "age", 40).value


def test_enum_encodes_domain_index(schema):
    assert canonicalize_keyword(schema, "state", "ny").value == b"\x01"
    assert decode_value(schema["state"], b"\x01") == "NY"


@pytest.mark.parametrize(
    "field,value",
    [("nope", "x"), ("age", "3"), ("age", 106), ("age", True), ("state", "TX"), ("name", 5), ("name", "a\x00b")],
)
def test_canonicalize_rejects_bad_input(schema, field, value):
    with pytest.raises(SchemaError):
        canonicalize_keyword(schema, field, value)


def test_extract_one_keyword_per_indexed_field(schema):
    r = Record(1, {"name": "Ann", "age": 30, "state": "CA", "tags": ["x", "Y", "x"], "notes": "free"})
    kws = extract_keywords(r, schema)
    assert {k.field for k in kws} == {"name", "age", "state", "tags"}
    assert {k.value for k in kws if k.field == "tags"} == {b"x", b"y"}


def test_extract_rejects_nonconforming_record(schema):
    with pytest.raises(SchemaError):
        extract_keywords(Record(1, {"name": "Ann"}), schema)


NAMES = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=8)


@given(NAMES, st.binary(max_size=8), NAMES, st.binary(max_size=8))
def test_keyword_encoding_is_injective(f1, v1, f2, v2):
    a, b = Keyword(f1, v1), Keyword(f2, v2)
    assert (a.to_bytes() == b.to_bytes()) == (a == b)


@given(st.text(alphabet=st.characters(blacklist_characters="\x00", blacklist_categories=("Cs",)), max_size=20))
def test_fold_text_idempotent(s):
    once = fold_text(s)
    assert fold_text(once.decode("utf-8")) == once


@pytest.mark.parametrize("raw", ["a\x00b", "\ud800", "x\udfffy"])
def test_fold_text_rejects_unencodable(raw):
    with pytest.raises(SchemaError):
        fold_text(raw)


def test_schema_json_roundtrip(tmp_path, schema):
    s = Schema(schema.fields, TupleSpec(2, ("name", "age", "state"), ("name",)))
    s.dump(tmp_path / "s.json")
    assert Schema.load(tmp_path / "s.json") == s


def test_record_roundtrip(tmp_path):
    recs = [Record(2**64 - 1, {"a": "x"}, b"\x00\xff"), Record(0, {"a": "y"})]
    write_records(tmp_path / "r.jsonl", recs)
    assert read_records(tmp_path / "r.jsonl") == recs
    assert Record.from_bytes(recs[0].to_bytes()) == recs[0]


def test_record_id_must_be_u64():
    with pytest.raises(SchemaError):
        Record(2**64, {})


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(name="a", type="text", capabilities=("range",)),
        dict(name="a", type="integer", capabilities=("grams",), hi=3),
        dict(name="a", type="integer", capabilities=("range",)),
        dict(name="a", type="enum", values=()),
        dict(name="a b", type="text"),
        dict(name="a", type="text", capabilities=("bogus",)),
    ],
)
def test_field_spec_validation(kwargs):
    with pytest.raises(SchemaError):
        FieldSpec(**kwargs)


def test_tuple_spec_validation():
    with pytest.raises(SchemaError):
        TupleSpec(4, ("a", "b", "c"))
    with pytest.raises(SchemaError):
        TupleSpec(2, ("a", "b"), ("c",))


def test_profile_is_append_only_and_queryable():
    p = LeakageProfile()
    e1 = LeakageEvent(Operation.INIT, LeakObject.DATA_ITEMS, Level.STRUCTURE)
    e2 = LeakageEvent(Operation.QUERY, LeakObject.RESPONSES, Level.IDENTIFIER, Role.QUERIER)
    record_leakage(p, e1)
    record_leakage(p, e2)
    record_leakage(p, e1)
    assert len(p) == 3
    assert p.select(Operation.INIT) == [e1, e1]
    assert p.select(observer=Role.QUERIER) == [e2]
    assert p.max_level(Operation.QUERY) is Level.IDENTIFIER
    assert p.max_level(Operation.REFRESH) is None
    assert p.summary()[e1.kind] == 2


def test_levels_are_ordered():
    assert Level.STRUCTURE < Level.IDENTIFIER < Level.PREDICATE < Level.EQUALITY < Level.ORDER


def test_combiner_params():
    p = CombinerParams.parse("3,5,2,1024,3,32")
    assert (p.k, p.beta, p.ell, p.m, p.kappa, p.alpha) == (3, 5, 2, 1024, 3, 32)
    with pytest.raises(ValueError):
        CombinerParams(k=0)
    with pytest.raises(ValueError):
        CombinerParams(kappa=4, alpha=3)
    with pytest.raises(ValueError):
        CombinerParams(kappa=4, rho=3, alpha=8).require_rho_at_least_kappa()
    with pytest.raises(ValueError):
        CombinerParams.parse("1,2,3")
