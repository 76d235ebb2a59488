"""Tagged little-endian binary encoding for slot values.

The layout is a pure function of the value, so two encodings of equal
inputs are byte-identical. Supported: None, bool, int, float, str, bytes,
tuple, list, dict, numpy arrays, the imgops value types and packed records.
"""

from __future__ import annotations

import struct
from typing import Any

import numpy as np

from .imgops.types import Centroids, FeatureSet, Histogram, Homography, Image, ImageBundle, LabelMap


class CodecError(ValueError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


def _array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    a = a.astype(dt, copy=False)
    head = _str(dt.str) + struct.pack("<B", a.ndim) + b"".join(struct.pack("<Q", d) for d in a.shape)
    return head + a.tobytes()


def encode(value: Any) -> bytes:
    out = bytearray()
    _enc(value, out)
    return bytes(out)


def _enc(v: Any, out: bytearray) -> None:
    from .dataflow import PackedRecord

    if v is None:
        out += b"N"
    elif isinstance(v, bool):
        out += b"b" + (b"\x01" if v else b"\x00")
    elif isinstance(v, (int, np.integer)):
        n = int(v)
        if -(2**63) <= n < 2**63:
            out += b"i" + struct.pack("<q", n)
        else:  # arbitrary precision, decimal text
            out += b"j" + _str(str(n))
    elif isinstance(v, (float, np.floating)):
        out += b"f" + struct.pack("<d", float(v))
    elif isinstance(v, str):
        out += b"s" + _str(v)
    elif isinstance(v, (bytes, bytearray)):
        out += b"y" + _u32(len(v)) + bytes(v)
    elif isinstance(v, PackedRecord):
        out += b"R"
        _enc(v.unpack(), out)
    elif isinstance(v, Image):
        out += b"I" + struct.pack("<BII", v.channels, v.width, v.height) + v.pixels.tobytes()
    elif isinstance(v, ImageBundle):
        out += b"B" + _u32(len(v))
        for im in v:
            _enc(im, out)
    elif isinstance(v, Histogram):
        out += b"H" + _str(v.channel) + v.bins.astype("<f8").tobytes()
    elif isinstance(v, FeatureSet):
        out += b"F" + _array(v.keypoints) + _array(v.descriptors)
    elif isinstance(v, Homography):
        out += b"M" + v.matrix.astype("<f8").tobytes() + struct.pack("<q", v.inliers)
    elif isinstance(v, LabelMap):
        out += b"L" + struct.pack("<q", v.count) + _array(v.labels)
    elif isinstance(v, Centroids):
        out += b"C" + _array(v.vectors) + struct.pack("<q", v.iterations)
        _enc(list(v.objective_history), out)
    elif isinstance(v, np.ndarray):
        out += b"a" + _array(v)
    elif isinstance(v, tuple):
        out += b"t" + _u32(len(v))
        for x in v:
            _enc(x, out)
    elif isinstance(v, list):
        out += b"l" + _u32(len(v))
        for x in v:
            _enc(x, out)
    elif isinstance(v, dict):
        out += b"d" + _u32(len(v))
        for k, x in v.items():
            _enc(k, out)
            _enc(x, out)
    else:
        raise CodecError(f"cannot encode {type(v).__name__}")


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CodecError("truncated payload")
        b = self.buf[self.pos : self.pos + n].tobytes()
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        dt = np.dtype(self.string())
        (ndim,) = self.unpack("<B")
        shape = tuple(self.unpack("<Q")[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(shape).copy()


def decode(buf: bytes) -> Any:
    r = _Reader(buf)
    v = _dec(r)
    if r.pos != len(r.buf):
        raise CodecError("trailing bytes after value")
    return v


def _dec(r: _Reader) -> Any:
    from .dataflow import PackedRecord

    tag = r.take(1)
    if tag == b"N":
        return None
    if tag == b"b":
        return r.take(1) == b"\x01"
    if tag == b"i":
        return r.unpack("<q")[0]
    if tag == b"j":
        return int(r.string())
    if tag == b"f":
        return r.unpack("<d")[0]
    if tag == b"s":
        return r.string()
    if tag == b"y":
        (n,) = r.unpack("<I")
        return r.take(n)
    if tag == b"R":
        return PackedRecord.from_tuple(_dec(r))
    if tag == b"I":
        c, w, h = r.unpack("<BII")
        arr = np.frombuffer(r.take(w * h * c), dtype=np.uint8)
        return Image(arr.reshape((h, w) if c == 1 else (h, w, c)))
    if tag == b"B":
        (n,) = r.unpack("<I")
        return ImageBundle(tuple(_dec(r) for _ in range(n)))
    if tag == b"H":
        ch = r.string()
        return Histogram(np.frombuffer(r.take(256 * 8), dtype="<f8"), ch)
    if tag == b"F":
        return FeatureSet(r.array(), r.array())
    if tag == b"M":
        m = np.frombuffer(r.take(72), dtype="<f8").reshape(3, 3)
        (inl,) = r.unpack("<q")
        return Homography(m, inliers=inl)
    if tag == b"L":
        (count,) = r.unpack("<q")
        return LabelMap(r.array(), count)
    if tag == b"C":
        vec = r.array()
        (it,) = r.unpack("<q")
        return Centroids(vec, iterations=it, objective_history=_dec(r))
    if tag == b"a":
        return r.array()
    if tag in (b"t", b"l"):
        (n,) = r.unpack("<I")
        items = [_dec(r) for _ in range(n)]
        return tuple(items) if tag == b"t" else items
    if tag == b"d":
        (n,) = r.unpack("<I")
        out = {}
        for _ in range(n):
            k = _dec(r)
            out[k] = _dec(r)
        return out
    raise CodecError(f"unknown tag {tag!r}")
