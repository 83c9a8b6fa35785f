import numpy as np
from hypothesis import given, strategies as st

from bevsync.rng import normal_field, philox_generator, stream_key


def test_streams_are_reproducible_and_tagged():
    a = normal_field(3, (4, 5), "noise", 1)
    np.testing.assert_array_equal(a, normal_field(3, (4, 5), "noise", 1))
    assert not np.array_equal(a, normal_field(3, (4, 5), "noise", 2))
    assert not np.array_equal(a, normal_field(4, (4, 5), "noise", 1))
    assert stream_key(1, "a") != stream_key(1, "b")
    assert philox_generator(9, "x").integers(1 << 30) == philox_generator(9, "x").integers(1 << 30)


@given(st.integers(0, 2**40), st.integers(1, 300), st.integers(1, 300))
def test_elements_do_not_depend_on_shape(seed, n, k):
    # element i is a function of (seed, tags, i) only
    a = normal_field(seed, (n,), "t")
    b = normal_field(seed, (n + k,), "t")
    np.testing.assert_array_equal(a, b[:n])


def test_draw_order_does_not_matter():
    first = normal_field(0, (100,), "view", 1)
    normal_field(0, (1000,), "view", 2)
    np.testing.assert_array_equal(first, normal_field(0, (100,), "view", 1))


def test_standard_normal_moments():
    z = normal_field(11, (200_000,), "moments")
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1) < 0.01
    assert abs((z**4).mean() - 3) < 0.06
    assert np.isfinite(z).all()
