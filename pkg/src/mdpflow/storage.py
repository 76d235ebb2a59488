"""Storage backends: flat directory, sharded store simulation, append-only KV log.

Sharded and KV stores share one little-endian envelope framing::

    <u32 total_len> <u32 key_len> <key utf-8> <u32 crc32(payload)> <u8 encoding> <payload>

``total_len`` counts every byte after itself. A truncated final record (a
crash mid-append) is ignored when a log is scanned.
"""

from __future__ import annotations

import enum
import json
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from urllib.parse import quote

import numpy as np

from .errors import ChecksumMismatch, MissingKey, StorageError

_HEAD = struct.Struct("<I")


class Encoding(enum.IntEnum):
    IMAGE = 0  # PPM bytes
    TEXT = 1  # utf-8
    PACKED = 2  # codec bytes


_SUFFIX = {Encoding.IMAGE: ".ppm", Encoding.TEXT: ".txt", Encoding.PACKED: ".bin"}


def crc32(payload: bytes) -> int:
    return zlib.crc32(payload) & 0xFFFFFFFF


@dataclass(frozen=True)
class RecordEnvelope:
    key: str
    payload: bytes
    encoding: Encoding = Encoding.PACKED

    @property
    def checksum(self) -> int:
        return crc32(self.payload)

    def frame(self) -> bytes:
        kb = self.key.encode("utf-8")
        body = _HEAD.pack(len(kb)) + kb + _HEAD.pack(self.checksum) + struct.pack("<B", self.encoding) + self.payload
        return _HEAD.pack(len(body)) + body


def _parse_body(body: bytes, backend: str) -> RecordEnvelope:
    (klen,) = _HEAD.unpack_from(body, 0)
    key = body[4 : 4 + klen].decode("utf-8")
    pos = 4 + klen
    (crc,) = _HEAD.unpack_from(body, pos)
    enc = Encoding(body[pos + 4])
    payload = bytes(body[pos + 5 :])
    if crc32(payload) != crc:
        raise ChecksumMismatch(backend, key)
    return RecordEnvelope(key, payload, enc)


def scan_log(path: Path) -> Iterable[tuple[str, int, int]]:
    """Yield ``(key, body_offset, body_len)`` for every complete record in a log."""
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        return
    pos = 0
    while pos + 4 <= len(data):
        (total,) = _HEAD.unpack_from(data, pos)
        start = pos + 4
        if total < 9 or start + total > len(data):
            break
        (klen,) = _HEAD.unpack_from(data, start)
        if 4 + klen + 5 > total:
            break
        key = data[start + 4 : start + 4 + klen].decode("utf-8", errors="replace")
        yield key, start, total
        pos = start + total


@dataclass
class WriteReceipt:
    backend: str
    keys: list[str] = field(default_factory=list)
    paths: list[str] = field(default_factory=list)
    nbytes: int = 0


class _LogFile:
    """One append-only envelope log with an in-memory key index."""

    def __init__(self, path: Path, backend: str):
        self.path = path
        self.backend = backend
        self.index: dict[str, tuple[int, int]] = {}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.rebuild()

    def rebuild(self) -> None:
        self.index = {}
        self._end = 0
        for k, off, n in scan_log(self.path):
            self.index[k] = (off, n)
            self._end = off + n

    def append(self, envs: Sequence[RecordEnvelope]) -> int:
        written = 0
        try:
            with open(self.path, "r+b" if self.path.exists() else "wb") as fh:
                # drop any torn tail before appending
                fh.truncate(self._end)
                fh.seek(self._end)
                for env in envs:
                    buf = env.frame()
                    fh.write(buf)
                    self.index[env.key] = (self._end + 4, len(buf) - 4)
                    self._end += len(buf)
                    written += len(buf)
        except OSError as exc:
            raise StorageError(self.backend, f"write failed: {exc}") from exc
        return written

    def read(self, key: str) -> RecordEnvelope:
        if key not in self.index:
            raise MissingKey(self.backend, key)
        off, n = self.index[key]
        try:
            with open(self.path, "rb") as fh:
                fh.seek(off)
                body = fh.read(n)
        except OSError as exc:
            raise StorageError(self.backend, f"read failed: {exc}") from exc
        if len(body) != n:
            raise StorageError(self.backend, f"short read for key {key!r}")
        return _parse_body(body, self.backend)


class Store:
    """Common interface of every backend."""

    backend = "store"

    def write(self, envelopes: Iterable[RecordEnvelope]) -> WriteReceipt:
        raise NotImplementedError

    def read(self, keys: Iterable[str]) -> list[RecordEnvelope]:
        return [self.get(k) for k in keys]

    def get(self, key: str) -> RecordEnvelope:
        raise NotImplementedError

    def keys(self) -> list[str]:
        raise NotImplementedError

    def __contains__(self, key: str) -> bool:
        return key in set(self.keys())


class KVStore(Store):
    backend = "kv"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._log = _LogFile(self.path, self.backend)

    def write(self, envelopes):
        envs = list(envelopes)
        with self._lock:
            n = self._log.append(envs)
        return WriteReceipt(self.backend, [e.key for e in envs], [str(self.path)] if envs else [], n)

    def get(self, key):
        return self._log.read(key)

    def keys(self):
        return list(self._log.index)


class ShardedStore(Store):
    """Hash-placed shards; replica ``r`` of a key lives on shard ``(h + r) % count``."""

    backend = "sharded"

    def __init__(self, path: str | Path, shard_count: int = 4, replication_factor: int = 1):
        if shard_count < 1 or replication_factor < 1:
            raise StorageError(self.backend, "shard_count and replication_factor must be >= 1")
        if replication_factor > shard_count:
            raise StorageError(self.backend, "replication_factor cannot exceed shard_count")
        self.path = Path(path)
        self.shard_count = shard_count
        self.replication_factor = replication_factor
        self._lock = threading.Lock()
        self._shards = [_LogFile(self.path / f"shard-{i}" / "data.log", self.backend) for i in range(shard_count)]

    def placement(self, key: str) -> list[int]:
        h = crc32(key.encode("utf-8")) % self.shard_count
        return [(h + r) % self.shard_count for r in range(self.replication_factor)]

    def write(self, envelopes):
        envs = list(envelopes)
        per_shard: dict[int, list[RecordEnvelope]] = {}
        for e in envs:
            for s in self.placement(e.key):
                per_shard.setdefault(s, []).append(e)
        n = 0
        with self._lock:
            for s in sorted(per_shard):
                n += self._shards[s].append(per_shard[s])
        paths = [str(self._shards[s].path) for s in sorted(per_shard)]
        return WriteReceipt(self.backend, [e.key for e in envs], paths, n)

    def get(self, key):
        err: Exception | None = None
        for s in self.placement(key):
            try:
                return self._shards[s].read(key)
            except (ChecksumMismatch, MissingKey) as exc:
                err = exc
        raise err  # type: ignore[misc]

    def shard_keys(self, i: int) -> list[str]:
        return list(self._shards[i].index)

    def keys(self):
        seen: dict[str, None] = {}
        for sh in self._shards:
            for k in sh.index:
                seen.setdefault(k, None)
        return list(seen)


class FlatStore(Store):
    """One file per key (PPM for images) plus a JSON-lines manifest of checksums."""

    backend = "flat"
    MANIFEST = "manifest.jsonl"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        mf = self.path / self.MANIFEST
        if mf.exists():
            for line in mf.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    row = json.loads(line)
                    self._index[row["key"]] = row

    def file_for(self, key: str, enc: Encoding) -> Path:
        return self.path / (quote(key, safe="") + _SUFFIX[Encoding(enc)])

    def write(self, envelopes):
        envs = list(envelopes)
        receipt = WriteReceipt(self.backend)
        with self._lock:
            try:
                with open(self.path / self.MANIFEST, "a", encoding="utf-8") as mf:
                    for e in envs:
                        f = self.file_for(e.key, e.encoding)
                        f.write_bytes(e.payload)
                        row = {"key": e.key, "file": f.name, "crc": e.checksum, "enc": int(e.encoding)}
                        mf.write(json.dumps(row, sort_keys=True) + "\n")
                        self._index[e.key] = row
                        receipt.keys.append(e.key)
                        receipt.paths.append(str(f))
                        receipt.nbytes += len(e.payload)
            except OSError as exc:
                raise StorageError(self.backend, f"write failed: {exc}") from exc
        return receipt

    def get(self, key):
        row = self._index.get(key)
        if row is None:
            raise MissingKey(self.backend, key)
        try:
            payload = (self.path / row["file"]).read_bytes()
        except OSError as exc:
            raise StorageError(self.backend, f"read failed: {exc}") from exc
        if crc32(payload) != row["crc"]:
            raise ChecksumMismatch(self.backend, key)
        return RecordEnvelope(key, payload, Encoding(row["enc"]))

    def keys(self):
        return list(self._index)


class StoreKind(str, enum.Enum):
    FLAT = "flat"
    SHARDED = "sharded"
    KV = "kv"


def open_store(kind: StoreKind | str, path: str | Path, shard_count: int = 4, replication_factor: int = 1) -> Store:
    kind = StoreKind(kind)
    if kind is StoreKind.FLAT:
        return FlatStore(path)
    if kind is StoreKind.SHARDED:
        return ShardedStore(path, shard_count, replication_factor)
    return KVStore(path)


def store_write(store: Store, envelopes: Iterable[RecordEnvelope]) -> WriteReceipt:
    return store.write(envelopes)


def store_read(store: Store, keys: Iterable[str]) -> list[RecordEnvelope]:
    return store.read(keys)


# -- result routing ------------------------------------------------------------


@dataclass
class Stores:
    """Configured stores; ``aux`` picks flat or kv for non-image results."""

    sharded: Store
    flat: Store | None = None
    kv: Store | None = None
    aux: str = "flat"

    def aux_store(self) -> Store:
        store = self.kv if self.aux == "kv" else self.flat
        if store is None:
            raise StorageError(self.aux, "no store configured for non-image results")
        return store

    @classmethod
    def under(cls, root: str | Path, aux: str = "flat", shard_count: int = 4, replication_factor: int = 1) -> "Stores":
        root = Path(root)
        return cls(
            ShardedStore(root / "sharded", shard_count, replication_factor),
            FlatStore(root / "flat"),
            KVStore(root / "kv.log"),
            aux,
        )


@dataclass
class StorageReceipt:
    writes: list[WriteReceipt] = field(default_factory=list)

    @property
    def keys(self) -> list[str]:
        return [k for w in self.writes for k in w.keys]

    @property
    def backends(self) -> list[str]:
        return [w.backend for w in self.writes]

    @property
    def paths(self) -> list[str]:
        return [p for w in self.writes for p in w.paths]


def format_value(v) -> str:
    """Text form of one result value for the ``im_id<TAB>value`` manifest."""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.integer, np.floating)):
        return format_value(v.item())
    if isinstance(v, np.ndarray):
        return json.dumps(v.tolist())
    if isinstance(v, (tuple, list)):
        return json.dumps([_jsonable(x) for x in v])
    if isinstance(v, dict):
        return json.dumps({str(k): _jsonable(x) for k, x in v.items()}, sort_keys=True)
    return str(v)


def _jsonable(x):
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (tuple, list)):
        return [_jsonable(y) for y in x]
    if hasattr(x, "matrix"):
        return x.matrix.tolist()
    return x


def manifest_text(pairs) -> str:
    return "".join(f"{k}\t{format_value(v)}\n" for k, v in pairs)


def _image_envelopes(prefix: str, items) -> list[RecordEnvelope]:
    from .imgops import Image, ImageBundle, encode_ppm

    envs = []
    for im_id, value in items:
        if isinstance(value, Image):
            envs.append(RecordEnvelope(f"{prefix}/{im_id}", encode_ppm(value), Encoding.IMAGE))
        elif isinstance(value, (list, tuple, ImageBundle)):
            for j, im in enumerate(value):
                envs.append(RecordEnvelope(f"{prefix}/{im_id}/{j}", encode_ppm(im), Encoding.IMAGE))
        elif value is not None:
            raise StorageError("sharded", f"image result for {im_id!r} is not an image collection")
    return envs


def _matrix_envelopes(prefix: str, items) -> list[RecordEnvelope]:
    from .codec import encode

    return [RecordEnvelope(f"{prefix}/{im_id}", encode(value), Encoding.PACKED) for im_id, value in items]


def route(result, stores: Stores, prefix: str = "result") -> StorageReceipt:
    """I_R and L_M go to the sharded store; L_s, D_S and T_L to flat or KV text."""
    from .dataflow import ResultKind

    receipt = StorageReceipt()
    items = list(result.items.items()) if isinstance(result.items, dict) else list(result.items)
    if not items:
        return receipt
    if result.kind is ResultKind.IMAGES:
        envs = _image_envelopes(prefix, items)
        if envs:
            receipt.writes.append(stores.sharded.write(envs))
    elif result.kind is ResultKind.MATRICES:
        receipt.writes.append(stores.sharded.write(_matrix_envelopes(prefix, items)))
    else:
        env = RecordEnvelope(f"{prefix}/manifest.tsv", manifest_text(items).encode("utf-8"), Encoding.TEXT)
        receipt.writes.append(stores.aux_store().write([env]))
    return receipt


# -- IO benchmark --------------------------------------------------------------

BENCH_PAIRS = (("KV-KV", "kv", "kv"), ("Sharded-Sharded", "sharded", "sharded"), ("Sharded-Flat", "sharded", "flat"))


@dataclass
class IoRow:
    pair: str
    n: int
    read_ms: float
    write_ms: float
    fidelity: str


@dataclass
class IoReport:
    rows: list[IoRow] = field(default_factory=list)

    def table(self) -> str:
        sizes = sorted({r.n for r in self.rows})
        pairs = list(dict.fromkeys(r.pair for r in self.rows))
        head = ["pair"] + [f"n={n} ms" for n in sizes] + ["fidelity"]
        lines = ["\t".join(head)]
        for p in pairs:
            cells = [p]
            fid = []
            for n in sizes:
                hit = [r for r in self.rows if r.pair == p and r.n == n]
                cells.append(f"{hit[0].read_ms + hit[0].write_ms:.1f}" if hit else "-")
                fid += [r.fidelity for r in hit]
            cells.append("exact" if fid and all(f == "exact" for f in fid) else "mismatch")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def io_bench(keys: Sequence[str], src: Store, dst: Store, pair: str | None = None) -> IoRow:
    """Copy ``keys`` from ``src`` to ``dst`` and verify a bit-exact round trip."""
    t0 = time.perf_counter()
    envs = src.read(keys)
    t1 = time.perf_counter()
    dst.write(envs)
    t2 = time.perf_counter()
    back = dst.read(keys)
    exact = all(a.payload == b.payload and a.encoding == b.encoding for a, b in zip(envs, back)) and len(back) == len(envs)
    return IoRow(pair or f"{src.backend}-{dst.backend}", len(keys), (t1 - t0) * 1e3, (t2 - t1) * 1e3, "exact" if exact else "mismatch")


def run_io_bench(envelopes_by_size: dict[int, list[RecordEnvelope]], workdir: str | Path, shard_count: int = 4) -> IoReport:
    """Materialize each dataset in the source backend, then time each backend pair."""
    workdir = Path(workdir)
    report = IoReport()
    for n, envs in sorted(envelopes_by_size.items()):
        if not envs:
            continue
        keys = [e.key for e in envs]
        for name, s, d in BENCH_PAIRS:
            base = workdir / f"n{n}" / name
            src = open_store(s, base / ("src.log" if s == "kv" else "src"), shard_count)
            dst = open_store(d, base / ("dst.log" if d == "kv" else "dst"), shard_count)
            src.write(envs)
            report.rows.append(io_bench(keys, src, dst, name))
    return report
