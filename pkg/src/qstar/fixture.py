"""Binary fixture files holding one :class:`FeatureBundle`.

Layout (little-endian): magic ``QSTF``, version ``u16``, then for each of
the six feature tensors in fixed order: name length ``u8``, name bytes,
rank ``u8``, extents ``u32`` each, payload ``f64`` row-major. The file
ends with the label ``u32`` and the question-type tag ``u8``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .synth import TAGS, FeatureBundle

MAGIC = b"QSTF"
VERSION = 1


class FixtureFormatError(ValueError):
    pass


def encode(bundle: FeatureBundle) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION)]
    for name in FeatureBundle.TENSORS:
        arr = np.ascontiguousarray(getattr(bundle, name), dtype="<f8")
        raw = name.encode("ascii")
        out.append(struct.pack("<B", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    out.append(struct.pack("<IB", bundle.label, TAGS.index(bundle.question_type)))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FixtureFormatError(
                f"truncated fixture: need {n} bytes for {what} at offset {self.pos}, {len(self.buf) - self.pos} left"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> FeatureBundle:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FixtureFormatError("bad magic: not a QSTF fixture")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FixtureFormatError(f"unsupported fixture version {version}")
    arrays = {}
    for expected in FeatureBundle.TENSORS:
        (n,) = r.unpack("<B", "name length")
        name = r.take(n, "name").decode("ascii", errors="replace")
        if name != expected:
            raise FixtureFormatError(f"expected tensor {expected!r}, found {name!r}")
        (rank,) = r.unpack("<B", f"{name} rank")
        shape = r.unpack(f"<{rank}I", f"{name} extents")
        count = int(np.prod(shape, dtype=np.uint64))
        remaining = len(buf) - r.pos
        if count * 8 > remaining:
            raise FixtureFormatError(
                f"length mismatch: {name} declares {shape} ({count * 8} bytes) but only {remaining} bytes remain"
            )
        arrays[name] = np.frombuffer(r.take(count * 8, name), dtype="<f8").astype(np.float64).reshape(shape)
    label, tag = r.unpack("<IB", "label and question type")
    if r.pos != len(buf):
        raise FixtureFormatError(f"length mismatch: {len(buf) - r.pos} trailing bytes after the payload")
    if tag >= len(TAGS):
        raise FixtureFormatError(f"unknown question type code {tag}")
    return FeatureBundle(**arrays, label=label, question_type=TAGS[tag])


def write_fixture(bundle: FeatureBundle, path: str | Path) -> None:
    Path(path).write_bytes(encode(bundle))


def read_fixture(path: str | Path) -> FeatureBundle:
    return decode(Path(path).read_bytes())
