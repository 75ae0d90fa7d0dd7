import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstar.config import RunConfig
from qstar.fixture import FixtureFormatError, decode, encode, read_fixture, write_fixture
from qstar.synth import Codebooks, FeatureBundle, make_sample

CFG = RunConfig()


def test_round_trip_of_100_bundles(tmp_path):
    books = Codebooks.from_config(CFG)
    for i in range(100):
        b = make_sample(i, CFG, books).bundle
        path = tmp_path / f"{i}.qstf"
        write_fixture(b, path)
        back = read_fixture(path)
        assert back == b
        for k in FeatureBundle.TENSORS:
            assert getattr(back, k).tobytes() == getattr(b, k).tobytes()


@given(st.integers(0, 6), st.sampled_from(["audio", "visual", "audio-visual"]), st.integers(1, 4), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_round_trip_of_arbitrary_shapes(label, tag, t, seed):
    rng = np.random.default_rng(seed)
    shapes = dict(F_v=(t, 3), F_p=(t, 2, 3), F_a=(t, 3), F_ast=(t, 5, 3), F_w=(4, 3), F_sentence=(3,))
    b = FeatureBundle(**{k: rng.standard_normal(s) for k, s in shapes.items()}, label=label, question_type=tag)
    assert decode(encode(b)) == b


def test_header_layout():
    raw = encode(make_sample(0, CFG).bundle)
    assert raw[:4] == b"QSTF"
    assert struct.unpack("<H", raw[4:6]) == (1,)
    assert raw[6] == len("F_v") and raw[7:10] == b"F_v"


def test_bad_magic():
    raw = encode(make_sample(0, CFG).bundle)
    with pytest.raises(FixtureFormatError, match="magic"):
        decode(b"XXXX" + raw[4:])


def test_bad_version():
    raw = encode(make_sample(0, CFG).bundle)
    with pytest.raises(FixtureFormatError, match="version"):
        decode(raw[:4] + struct.pack("<H", 9) + raw[6:])


@pytest.mark.parametrize("cut", [3, 10, 100, -6, -1])
def test_truncation(cut):
    raw = encode(make_sample(0, CFG).bundle)
    with pytest.raises(FixtureFormatError):
        decode(raw[:cut])


def test_declared_length_larger_than_payload():
    raw = bytearray(encode(make_sample(0, CFG).bundle))
    # F_v extents start after magic, version, name, rank
    off = 4 + 2 + 1 + 3 + 1
    raw[off : off + 4] = struct.pack("<I", 10_000)
    with pytest.raises(FixtureFormatError, match="length mismatch"):
        decode(bytes(raw))


def test_trailing_bytes():
    raw = encode(make_sample(0, CFG).bundle)
    with pytest.raises(FixtureFormatError, match="trailing"):
        decode(raw + b"\0")


def test_unknown_tag():
    raw = encode(make_sample(0, CFG).bundle)
    with pytest.raises(FixtureFormatError, match="question type"):
        decode(raw[:-1] + bytes([7]))
