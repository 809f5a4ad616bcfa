import random

import pytest

from vaultquery.lsh import BitSamplingLSH, bucket_collision_probability, match_probability


def test_deterministic_and_shape():
    a, b = BitSamplingLSH(16, 4, 6, seed=1), BitSamplingLSH(16, 4, 6, seed=1)
    assert a.hashes(1234) == b.hashes(1234)
    kws = a.keywords("f", 1234)
    assert len(kws) == 4 and len({k.field for k in kws}) == 4
    with pytest.raises(ValueError):
        BitSamplingLSH(0)


def test_identical_values_always_collide():
    lsh = BitSamplingLSH(32, 6, 8)
    assert set(lsh.keywords("f", 99)) == set(lsh.keywords("f", 99))


def test_empirical_collision_rate_matches_formula():
    bits, samples, trials, d = 32, 4, 4000, 8
    rng = random.Random(0)
    hits = 0
    for t in range(trials):
        lsh = BitSamplingLSH(bits, 1, samples, seed=t)
        x = rng.getrandbits(bits)
        y = x
        for p in rng.sample(range(bits), d):
            y ^= 1 << p
        hits += lsh.hashes(x) == lsh.hashes(y)
    expected = bucket_collision_probability(d, bits, samples)
    assert abs(hits / trials - expected) < 0.03


def test_match_probability_monotone():
    probs = [match_probability(d, 32, 8, 6) for d in range(33)]
    assert probs[0] == 1.0 and probs[-1] == 0.0
    assert all(a >= b for a, b in zip(probs, probs[1:]))
