import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectral_dp.rng import PURPOSE_NOISE, PURPOSE_SAMPLING, NoiseStream, derive_stream_id


def test_stream_restarts_each_call():
    s = NoiseStream(1, 2)
    np.testing.assert_array_equal(s.normal(5), s.normal(5))
    np.testing.assert_array_equal(s.uniform(5), NoiseStream(1, 2).uniform(5))


def test_distinct_streams_differ():
    a = NoiseStream(1).child(PURPOSE_NOISE, step=3, index=0).normal(4)
    b = NoiseStream(1).child(PURPOSE_NOISE, step=3, index=1).normal(4)
    c = NoiseStream(1).child(PURPOSE_SAMPLING, step=3, index=0).normal(4)
    d = NoiseStream(2).child(PURPOSE_NOISE, step=3, index=0).normal(4)
    assert len({tuple(x) for x in (a, b, c, d)}) == 4


def test_prefix_stability():
    s = NoiseStream(7)
    np.testing.assert_array_equal(s.normal(10)[:3], s.normal(3))


@given(st.integers(0, 255), st.integers(0, 2**40 - 1), st.integers(0, 2**16 - 1))
def test_stream_id_packing_is_injective(purpose, step, index):
    sid = derive_stream_id(purpose, step, index)
    assert (sid >> 56, (sid >> 16) & (2**40 - 1), sid & 0xFFFF) == (purpose, step, index)


@pytest.mark.parametrize("args", [(256, 0, 0), (1, 2**40, 0), (1, 0, 2**16), (-1, 0, 0)])
def test_stream_id_ranges(args):
    with pytest.raises(ValueError):
        derive_stream_id(*args)


def test_normal_moments():
    z = NoiseStream(0).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.01
