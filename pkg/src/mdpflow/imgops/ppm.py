"""Binary PNM codec: P6 (RGB) and P5 (gray), maxval 255."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ImageFormatError
from .types import Image


def encode_ppm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + img.pixels.tobytes()


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PNM header")
        out.append(buf[start:pos])
    # exactly one whitespace byte separates header from raster
    return out, pos + 1


def decode_ppm(buf: bytes) -> Image:
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError("non-numeric PNM header field") from exc
    if maxv != 255:
        raise ImageFormatError(f"only maxval 255 supported, got {maxv}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = buf[offset : offset + expected]
    if len(raster) != expected:
        raise ImageFormatError(f"PNM raster has {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return Image(arr.reshape(shape))


def write_ppm(path: str | Path, img: Image) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path: str | Path) -> Image:
    return decode_ppm(Path(path).read_bytes())
