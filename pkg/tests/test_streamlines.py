import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rltrack.streamlines import MAGIC, StreamlineFileError, load_s1, save_s1

coords = arrays(np.float32, st.tuples(st.integers(1, 12), st.just(3)),
                elements=st.floats(-500, 500, width=32))


@settings(max_examples=40, deadline=None)
@given(st.lists(coords, max_size=8))
def test_s1_round_trip(tmp_path_factory, sl):
    p = tmp_path_factory.mktemp("s1") / "t.s1"
    save_s1(p, sl)
    back = load_s1(p)
    assert len(back) == len(sl)
    for a, b in zip(sl, back):
        assert np.array_equal(a.astype(np.float64), b)


def test_s1_layout(tmp_path):
    p = tmp_path / "t.s1"
    save_s1(p, [np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])])
    raw = p.read_bytes()
    assert raw[:8] == MAGIC
    assert struct.unpack_from("<II", raw, 8) == (1, 2)
    assert np.array_equal(np.frombuffer(raw, "<f4", offset=16), np.arange(1, 7, dtype=np.float32))
    assert len(raw) == 16 + 24


@pytest.mark.parametrize("cut", ["magic", "truncated", "trailing"])
def test_s1_errors(tmp_path, cut):
    p = tmp_path / "t.s1"
    save_s1(p, [np.zeros((3, 3))])
    raw = p.read_bytes()
    bad = {"magic": b"XXXXXXXX" + raw[8:], "truncated": raw[:-5], "trailing": raw + b"\0"}[cut]
    p.write_bytes(bad)
    with pytest.raises(StreamlineFileError):
        load_s1(p)
