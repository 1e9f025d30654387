"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MOFELAB1"
    u32 version
    u32 metadata length, metadata as UTF-8 JSON (sorted keys)
    u32 entry count
    per entry: u16 name length, name, u32 layer-dim count, u32 dims...,
               u64 value count, float64 values (layer by layer, W row-major then b)
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .dmome import DmomeModel
from .errors import DataError, ParseError, TruncationError
from .nn import Mlp

MAGIC = b"MOFELAB1"
VERSION = 1


def encode(models: Dict[str, Mlp], metadata: dict) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    meta = json.dumps(metadata, sort_keys=True).encode()
    out += struct.pack("<I", len(meta)) + meta
    out += struct.pack("<I", len(models))
    for name, net in models.items():
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack(f"<I{len(net.dims)}I", len(net.dims), *net.dims)
        flat = net.flat()
        out += struct.pack("<Q", flat.size) + flat.astype("<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError("checkpoint ends unexpectedly")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> Tuple[Dict[str, Mlp], dict]:
    if buf[:len(MAGIC)] != MAGIC:
        raise ParseError("not a MOFELAB1 checkpoint")
    if len(buf) < len(MAGIC) + 8:
        raise TruncationError("checkpoint too short")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise DataError("checkpoint checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I")
    metadata = json.loads(r.take(meta_len).decode())
    (count,) = r.unpack("<I")
    models = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (n_dims,) = r.unpack("<I")
        dims = list(r.unpack(f"<{n_dims}I"))
        (n_values,) = r.unpack("<Q")
        flat = np.frombuffer(r.take(8 * n_values), dtype="<f8").astype(np.float64)
        skeleton = Mlp(dims, [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
                       [np.zeros(o) for o in dims[1:]])
        models[name] = skeleton.with_flat(flat)
    if r.pos != len(body):
        raise ParseError("trailing bytes after the last entry")
    return models, metadata


def save_checkpoint(path, models: Dict[str, Mlp], metadata: dict) -> None:
    Path(path).write_bytes(encode(models, metadata))


def load_checkpoint(path) -> Tuple[Dict[str, Mlp], dict]:
    return decode(Path(path).read_bytes())


def save_model(path, model: DmomeModel, **extra) -> None:
    save_checkpoint(path, model.models(), {**model.metadata(), **extra})


def load_model(path) -> Tuple[DmomeModel, dict]:
    models, meta = load_checkpoint(path)
    m = meta["M"]
    try:
        experts = [models[f"expert_{i}"] for i in range(m)]
        gate = models["gate"]
    except KeyError as exc:
        raise ParseError(f"checkpoint lacks entry {exc}") from None
    model = DmomeModel(experts, gate, list(meta["modality_dims"]), meta["K"], meta["gate_input"],
                       meta["gate_sees_mask"], meta["static_weights"])
    return model, meta
