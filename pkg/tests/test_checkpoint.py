import struct

import numpy as np
import pytest

from mofelab.checkpoint import decode, encode, load_model, save_model
from mofelab.dmome import dmome_init, forward_batch
from mofelab.errors import DataError, ParseError, TruncationError


@pytest.fixture
def model():
    return dmome_init([2, 3], 4, task_count=2, expert_hidden=(5,), gate_hidden=(3,),
                      gate_input="expert_features", gate_sees_mask=True, seed=11)


def test_round_trip_bit_exact(tmp_path, model):
    save_model(tmp_path / "m.ckpt", model, variant="simmlm")
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["variant"] == "simmlm" and meta["K"] == 2
    for name, net in model.models().items():
        assert back.models()[name].flat().tobytes() == net.flat().tobytes()
        assert back.models()[name].dims == net.dims
    assert (back.gate_input, back.gate_sees_mask) == ("expert_features", True)
    xs = [np.ones((2, 2)), np.ones((2, 3))]
    masks = np.array([[True, True], [True, False]])
    assert forward_batch(back, xs, masks).mixed.tobytes() == forward_batch(model, xs, masks).mixed.tobytes()


def test_encoding_is_deterministic(model):
    assert encode(model.models(), model.metadata()) == encode(model.models(), model.metadata())


def test_layout_prefix(model):
    buf = encode(model.models(), {"a": 1})
    assert buf[:8] == b"MOFELAB1"
    assert struct.unpack("<I", buf[8:12]) == (1,)


def test_flipped_byte_fails_checksum(model):
    buf = bytearray(encode(model.models(), model.metadata()))
    buf[len(buf) // 2] ^= 0xFF
    with pytest.raises(DataError):
        decode(bytes(buf))


def test_bad_magic(model):
    buf = encode(model.models(), model.metadata())
    with pytest.raises(ParseError):
        decode(b"NOTMOFE1" + buf[8:])


def test_truncated():
    with pytest.raises(TruncationError):
        decode(b"MOFELAB1\x01")
