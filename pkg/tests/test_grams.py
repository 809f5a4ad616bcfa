import pytest
from hypothesis import given, strategies as st

from vaultquery.grams import PAD, GramSpace, kgram_extract, pattern_grams


def test_teststring_positional_grams():
    assert kgram_extract("teststring", 3, positional=True) == [
        (1, "tes"), (2, "est"), (3, "sts"), (4, "tst"), (5, "str"), (6, "tri"), (7, "rin"), (8, "ing"),
    ]


def test_padding_and_end_positions():
    assert kgram_extract("abcd", 3, 6) == ["abc", "bcd", "cd" + PAD, "d" + PAD * 2]
    assert kgram_extract("abcd", 3, 6, positional=True, from_end=True)[:2] == [(-1, "bcd"), (-2, "abc")]
    assert kgram_extract(b"ab", 2, 3) == [b"ab", b"b\x00"]


@given(st.text(alphabet="abc", min_size=1, max_size=12), st.integers(1, 4), st.integers(0, 6))
def test_gram_count(s, kappa, extra):
    alpha = max(len(s), kappa) + extra
    assert len(kgram_extract(s, kappa, alpha)) == alpha - kappa + 1


def test_errors():
    with pytest.raises(ValueError):
        kgram_extract("abcdef", 3, 4)
    with pytest.raises(ValueError):
        kgram_extract("ab", 0)
    with pytest.raises(ValueError):
        pattern_grams("ab", 3)


def test_short_pattern_interval_unpadded():
    space = GramSpace("abcdefghijklmnopqrstuvwxyz", 3, padded=False)
    assert space.prefix_bounds("hi") == ("hia", "hiz")


@given(st.text(alphabet="abcd" + PAD, min_size=3, max_size=3), st.text(alphabet="abcd" + PAD, min_size=3, max_size=3))
def test_encoding_order_preserving(a, b):
    space = GramSpace("abcd", 3)
    assert (space.encode(a) < space.encode(b)) == ([space.symbols.index(c) for c in a] < [space.symbols.index(c) for c in b])
    assert space.decode(space.encode(a)) == a


def test_prefix_interval_contains_exactly_prefixed_grams():
    space = GramSpace("abc", 3)
    lo, hi = (space.encode(g) for g in space.prefix_bounds("b"))
    inside = {space.decode(v) for v in range(lo, hi + 1)}
    assert inside == {g for g in (space.decode(v) for v in range(space.size)) if g.startswith("b")}
    with pytest.raises(ValueError):
        space.encode("bz" + PAD)
