import numpy as np
import pytest
from hypothesis import given, strategies as st

from vgibbs.rng import stream


def test_same_key_same_stream():
    assert np.array_equal(stream(3, "dlr", 2).random(8), stream(3, "dlr", 2).random(8))


def test_distinct_keys_and_seeds_differ():
    draws = [stream(3, "dlr", 2), stream(3, "dlr", 3), stream(4, "dlr", 2), stream(3, "laplace", 2), stream(3)]
    rows = [g.random(4) for g in draws]
    for i in range(len(rows)):
        for j in range(i):
            assert not np.array_equal(rows[i], rows[j])


def test_stream_independent_of_other_jobs():
    a = stream(9, "x").random(5)
    for k in range(10):
        stream(9, "y", k).random(100)
    assert np.array_equal(a, stream(9, "x").random(5))


def test_negative_integer_key_rejected():
    with pytest.raises(ValueError):
        stream(1, -1)


@given(st.integers(0, 2 ** 32), st.text(max_size=8))
def test_streams_reproducible(seed, key):
    assert stream(seed, key).integers(0, 2 ** 62) == stream(seed, key).integers(0, 2 ** 62)
