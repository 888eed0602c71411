import numpy as np

from basisflow.rng import NOISE, Stream


def test_streams_are_reproducible_and_independent():
    a = Stream(7, 3, NOISE).raw(10)
    assert np.array_equal(a, Stream(7, 3, NOISE).raw(10))
    assert not np.array_equal(a, Stream(7, 4, NOISE).raw(10))
    assert not np.array_equal(a, Stream(7, 3, NOISE + 1).raw(10))
    assert not np.array_equal(a, Stream(8, 3, NOISE).raw(10))


def test_uniform_bit_rule():
    s1, s2 = Stream(1, 2, 3), Stream(1, 2, 3)
    raw = s1.raw(5)
    u = s2.uniform(5)
    assert np.array_equal(u, [(int(x) >> 11) * 2.0 ** -53 for x in raw])
    assert np.all((u >= 0) & (u < 1))


def test_normal_moments_and_pairs():
    z = Stream(42, 0, 0).normal(200001)
    assert z.size == 200001
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    # odd lengths are a prefix of the even-length stream
    assert np.array_equal(Stream(5).normal(7), Stream(5).normal(8)[:7])


def test_integers_range():
    v = Stream(9).integers(3, 8, 10000)
    assert v.min() == 3 and v.max() == 7
    assert isinstance(Stream(9).integers(0, 2), int)
