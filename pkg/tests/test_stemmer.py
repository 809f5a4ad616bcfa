import random

from hypothesis import given, settings, strategies as st
from nltk.stem.porter import PorterStemmer

from vaultquery.stemmer import stem

REFERENCE = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)

KNOWN = {
    "caresses": "caress",
    "ponies": "poni",
    "cats": "cat",
    "feed": "feed",
    "agreed": "agre",
    "plastered": "plaster",
    "motoring": "motor",
    "sing": "sing",
    "hopping": "hop",
    "filing": "file",
    "happy": "happi",
    "relational": "relat",
    "conditional": "condit",
    "generalization": "gener",
    "electrical": "electr",
    "adjustable": "adjust",
    "connections": "connect",
    "running": "run",
}


def test_known_stems():
    assert {w: stem(w) for w in KNOWN} == KNOWN


@settings(max_examples=500)
@given(st.text(alphabet="abcdeghilmnoprstuvyz", min_size=3, max_size=14))
def test_matches_reference_implementation(word):
    assert stem(word) == REFERENCE.stem(word)


def test_bulk_agreement():
    rng = random.Random(7)
    words = ["".join(rng.choice("aeioustnlrcdy") for _ in range(rng.randint(3, 11))) for _ in range(5000)]
    assert [stem(w) for w in words] == [REFERENCE.stem(w) for w in words]


def test_short_words_unchanged():
    for w in ("a", "is", "as", "s", "oy"):
        assert stem(w) == w


def test_irregular_forms_not_conflated():
    assert stem("ran") != stem("running")
