"""A deterministic, metered map-reduce-style execution core.

Datasets are lazy: transformations append to the lineage and only actions
(``reduce``, ``collect``, ``count``) or an explicit :meth:`materialize`
execute it. Each executed operator is one *stage*; partitions of a stage
run on a thread pool of ``num_workers`` logical workers.

Elements are stored internally as ``(order_key, value)`` pairs. Order keys
are tuples of ints and define the global element order: a round-robin
layout puts element ``i`` of ``[a, b, c, d]`` at key ``(i,)`` in partition
``i % P``, so collecting merges partitions by key and returns the original
order even though partition contents interleave.

Memory model
------------
* The driver is charged for every collected element until the caller
  releases it with :meth:`Engine.driver_release`. Reduce charges the
  per-partition partials and the final value only while folding.
* ``driver_mem_cap`` / ``worker_mem_cap`` of 0 mean unlimited. Exceeding a
  cap raises :class:`~mdpflow.errors.MemoryExceeded` and the failed charge
  is not applied.
"""

from __future__ import annotations

import heapq
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Generic, Iterable, Optional, Sequence, TypeVar

from .errors import BadParam, EmptyDataset, EngineAbort, MemoryExceeded, UserFnError
from .sizing import SCALAR_BYTES, size_of

T = TypeVar("T")
U = TypeVar("U")

_MISSING = object()
_ctx = threading.local()

Key = tuple
Part = list  # list[tuple[Key, Any]]


@dataclass(frozen=True)
class ExecConfig:
    num_workers: int = 1
    num_partitions: int = 1
    driver_mem_cap: int = 0
    worker_mem_cap: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.num_workers < 1:
            raise BadParam(f"num_workers must be >= 1, got {self.num_workers}")
        if self.num_partitions < 1:
            raise BadParam(f"num_partitions must be >= 1, got {self.num_partitions}")
        if self.driver_mem_cap < 0 or self.worker_mem_cap < 0:
            raise BadParam("memory caps must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise BadParam("seed must be an unsigned 64-bit integer")


@dataclass
class RunStats:
    driver_highwater: int = 0
    shuffle_bytes: int = 0
    flowed_bytes: int = 0
    broadcast_bytes: int = 0
    stage_count: int = 0
    wall_ms: float = 0.0

    def as_dict(self, wall: bool = True) -> dict:
        d = asdict(self)
        if not wall:
            d.pop("wall_ms")
        return d

    def summary(self) -> str:
        return (
            f"stages={self.stage_count} driver_highwater={self.driver_highwater} "
            f"shuffle={self.shuffle_bytes} flowed={self.flowed_bytes} "
            f"broadcast={self.broadcast_bytes} wall_ms={self.wall_ms:.1f}"
        )


class Collected(list):
    """List returned by ``collect``; ``nbytes`` is what the driver was charged."""

    nbytes: int = 0


class BroadcastHandle(Generic[T]):
    """Read-only value shipped to workers.

    The first read of ``value`` inside a stage charges
    ``size_bytes * num_workers`` to ``broadcast_bytes``; reads on the driver
    are free.
    """

    def __init__(self, engine: "Engine", value: T, size: int):
        self._engine = engine
        self._value = value
        self.size_bytes = size
        self.charge_count = 0
        self._charged_stages: set[int] = set()

    @property
    def value(self) -> T:
        stage = getattr(_ctx, "stage", None)
        if stage is not None and getattr(_ctx, "engine", None) is self._engine:
            self._engine._charge_broadcast(self, stage)
        return self._value

    def __repr__(self) -> str:
        return f"BroadcastHandle(size_bytes={self.size_bytes}, charge_count={self.charge_count})"


class _ElementFailure(Exception):
    def __init__(self, key: Key, value: Any, cause: BaseException):
        self.key = key
        self.value = value
        self.cause = cause


class Engine:
    """Driver-side context owning configuration, worker pool and metering."""

    def __init__(self, config: ExecConfig | None = None, log: Callable[[str], None] | None = None):
        self.config = config or ExecConfig()
        self.stats = RunStats()
        self.stage_log: list[str] = []
        self._log = log
        self._lock = threading.Lock()
        self._driver_resident = 0
        self._worker_resident = [0] * self.config.num_workers
        self._pool: ThreadPoolExecutor | None = None
        self._t0 = time.perf_counter()
        self.op_invocations = 0  # transformation stages run, for lineage/caching checks

    # -- lifecycle -------------------------------------------------------

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def snapshot(self) -> RunStats:
        self.stats.wall_ms = (time.perf_counter() - self._t0) * 1000.0
        return RunStats(**asdict(self.stats))

    @property
    def driver_resident(self) -> int:
        return self._driver_resident

    # -- entry points ----------------------------------------------------

    def parallelize(self, items: Iterable[T], num_partitions: int | None = None) -> "PartitionedDataset[T]":
        n_parts = num_partitions or self.config.num_partitions
        if n_parts < 1:
            raise BadParam("num_partitions must be >= 1")
        parts: list[Part] = [[] for _ in range(n_parts)]
        for i, item in enumerate(items):
            parts[i % n_parts].append(((i,), item))
        return PartitionedDataset(self, lambda: parts, ("parallelize",), n_parts)

    def broadcast(self, value: T) -> BroadcastHandle[T]:
        size = size_of(value)
        cap = self.config.worker_mem_cap
        if cap and size > cap:
            raise MemoryExceeded("worker", size, 0, cap, stage="broadcast")
        return BroadcastHandle(self, value, size)

    def driver_release(self, nbytes: int) -> None:
        with self._lock:
            self._driver_resident = max(0, self._driver_resident - int(nbytes))

    def charge_driver(self, nbytes: int, where: str = "driver") -> None:
        """Charge driver-resident bytes held by driver-side code (accumulators)."""
        self._charge_driver(nbytes, where)

    def meter_flow(self, nbytes: int) -> None:
        with self._lock:
            self.stats.flowed_bytes += int(nbytes)

    # -- metering internals ----------------------------------------------

    def _charge_driver(self, nbytes: int, where: str) -> None:
        with self._lock:
            cap = self.config.driver_mem_cap
            if cap and self._driver_resident + nbytes > cap:
                raise MemoryExceeded("driver", nbytes, self._driver_resident, cap, stage=where)
            self._driver_resident += nbytes
            if self._driver_resident > self.stats.driver_highwater:
                self.stats.driver_highwater = self._driver_resident

    def _charge_worker(self, worker: int, nbytes: int, where: str) -> None:
        with self._lock:
            cap = self.config.worker_mem_cap
            if cap and self._worker_resident[worker] + nbytes > cap:
                raise MemoryExceeded("worker", nbytes, self._worker_resident[worker], cap, stage=where)
            self._worker_resident[worker] += nbytes

    def _charge_broadcast(self, handle: BroadcastHandle, stage: int) -> None:
        with self._lock:
            if stage in handle._charged_stages:
                return
            handle._charged_stages.add(stage)
            workers = self.config.num_workers
            handle.charge_count += workers
            self.stats.broadcast_bytes += handle.size_bytes * workers

    def _add_shuffle(self, nbytes: int) -> None:
        with self._lock:
            self.stats.shuffle_bytes += nbytes

    # -- stage execution -------------------------------------------------

    def _begin_stage(self) -> int:
        with self._lock:
            self.stats.stage_count += 1
            return self.stats.stage_count

    def _emit(self, stage: int, op: str, n_in: int, n_out: int, shuffle: int) -> None:
        line = f"stage={stage} op={op} in={n_in} out={n_out} shuffle={shuffle}"
        self.stage_log.append(line)
        if self._log is not None:
            self._log(line)

    def _run_partitions(self, op: str, parts: list[Part], fn: Callable[[Part], Part]) -> list[Part]:
        """Run ``fn`` over every partition as one stage."""
        stage = self._begin_stage()
        with self._lock:
            self.op_invocations += 1
        workers = self.config.num_workers

        def task(pidx: int) -> Part:
            _ctx.stage = stage
            _ctx.engine = self
            _ctx.worker = pidx % workers
            try:
                return fn(parts[pidx])
            finally:
                _ctx.stage = None
                _ctx.engine = None

        if workers > 1 and len(parts) > 1:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mdp-worker")
            futures = [self._pool.submit(task, i) for i in range(len(parts))]
            results, failures = [], []
            for fut in futures:
                try:
                    results.append(fut.result())
                except _ElementFailure as fail:
                    failures.append(fail)
                    results.append(None)
        else:
            results, failures = [], []
            for i in range(len(parts)):
                try:
                    results.append(task(i))
                except _ElementFailure as fail:
                    failures.append(fail)
                    results.append([])
        if failures:
            first = min(failures, key=lambda f: f.key)
            index = sum(1 for p in parts for k, _ in p if k < first.key)
            raise UserFnError(op, index, first.cause, im_id=getattr(first.value, "im_id", None)) from first.cause
        n_in = sum(len(p) for p in parts)
        n_out = sum(len(p) for p in results)
        self._emit(stage, op, n_in, n_out, 0)
        return results


def _merge(parts: Sequence[Part]) -> list[tuple[Key, Any]]:
    return list(heapq.merge(*parts, key=lambda kv: kv[0]))


def _round_robin(values: Sequence[Any], n_parts: int) -> list[Part]:
    parts: list[Part] = [[] for _ in range(n_parts)]
    for i, v in enumerate(values):
        parts[i % n_parts].append(((i,), v))
    return parts


class PartitionedDataset(Generic[T]):
    """A lazily described, partitioned collection bound to an :class:`Engine`."""

    def __init__(self, engine: Engine, source: Callable[[], list[Part]], lineage: tuple, num_partitions: int):
        self.engine = engine
        self._source = source
        self.lineage = lineage
        self.num_partitions = num_partitions
        self.cached = False
        self._materialized: list[Part] | None = None

    def __repr__(self) -> str:
        return f"PartitionedDataset(partitions={self.num_partitions}, lineage={'>'.join(self.lineage)}, cached={self.cached})"

    # -- internals -------------------------------------------------------

    def _parts(self) -> list[Part]:
        if self._materialized is not None:
            return self._materialized
        parts = self._source()
        if self.cached:
            for pidx, part in enumerate(parts):
                nbytes = sum(size_of(v) for _, v in part)
                if nbytes:
                    self.engine._charge_worker(pidx % self.engine.config.num_workers, nbytes, "cache")
            self._materialized = parts
        return parts

    def _derive(self, op: str, source: Callable[[], list[Part]], num_partitions: int | None = None) -> "PartitionedDataset":
        return PartitionedDataset(
            self.engine, source, self.lineage + (op,), num_partitions or self.num_partitions
        )

    def _elementwise(self, op: str, per_element: Callable[[Key, Any, list], None]) -> "PartitionedDataset":
        engine = self.engine

        def run_part(part: Part) -> Part:
            out: Part = []
            for key, value in part:
                try:
                    per_element(key, value, out)
                except EngineAbort:
                    raise
                except Exception as exc:  # noqa: BLE001 - user code boundary
                    raise _ElementFailure(key, value, exc) from exc
            return out

        return self._derive(op, lambda: engine._run_partitions(op, self._parts(), run_part))

    # -- transformations -------------------------------------------------

    def map(self, f: Callable[[T], U], name: str = "map") -> "PartitionedDataset[U]":
        return self._elementwise(name, lambda k, v, out: out.append((k, f(v))))

    def filter(self, pred: Callable[[T], bool], name: str = "filter") -> "PartitionedDataset[T]":
        def step(k, v, out):
            if pred(v):
                out.append((k, v))

        return self._elementwise(name, step)

    def flat_map(self, f: Callable[[T], Iterable[U]], name: str = "flat_map") -> "PartitionedDataset[U]":
        def step(k, v, out):
            for j, item in enumerate(f(v)):
                out.append((k + (j,), item))

        return self._elementwise(name, step)

    def zip_with_index(self) -> "PartitionedDataset[tuple[T, int]]":
        engine = self.engine

        def run() -> list[Part]:
            parts = self._parts()
            rank = {k: i for i, (k, _) in enumerate(_merge(parts))}
            return engine._run_partitions(
                "zip_with_index", parts, lambda part: [(k, (v, rank[k])) for k, v in part]
            )

        return self._derive("zip_with_index", run)

    def repartition(self, n: int) -> "PartitionedDataset[T]":
        if n < 1:
            raise BadParam("repartition requires n >= 1")
        engine = self.engine

        def run() -> list[Part]:
            parts = self._parts()
            stage = engine._begin_stage()
            with engine._lock:
                engine.op_invocations += 1
            ordered = [v for _, v in _merge(parts)]
            moved = sum(size_of(v) for v in ordered)
            engine._add_shuffle(moved)
            out = _round_robin(ordered, n)
            engine._emit(stage, "repartition", len(ordered), len(ordered), moved)
            return out

        return self._derive("repartition", run, n)

    def join(self, other: "PartitionedDataset") -> "PartitionedDataset":
        """Inner join of ``(k, v)`` and ``(k, w)`` pairs into ``(k, (v, w))``."""

        def combine(left, right):
            by_key: dict[Any, list] = {}
            for k, w in right:
                by_key.setdefault(k, []).append(w)
            rows = []
            for pos, (k, v) in enumerate(left):
                for w in by_key.get(k, ()):
                    rows.append(((k, pos), (k, (v, w))))
            return rows

        return self._keyed("join", other, combine)

    def subtract_by_key(self, other: "PartitionedDataset") -> "PartitionedDataset":
        def combine(left, right):
            drop = {k for k, _ in right}
            return [((k, pos), (k, v)) for pos, (k, v) in enumerate(left) if k not in drop]

        return self._keyed("subtract_by_key", other, combine)

    def _keyed(self, op: str, other: "PartitionedDataset", combine) -> "PartitionedDataset":
        engine = self.engine

        def run() -> list[Part]:
            left = [v for _, v in _merge(self._parts())]
            right = [v for _, v in _merge(other._parts())]
            stage = engine._begin_stage()
            with engine._lock:
                engine.op_invocations += 1
            moved = sum(size_of(v) for v in left) + sum(size_of(v) for v in right)
            engine._add_shuffle(moved)
            rows = combine(left, right)
            rows.sort(key=lambda r: r[0])
            out = _round_robin([r[1] for r in rows], self.num_partitions)
            engine._emit(stage, op, len(left) + len(right), len(rows), moved)
            return out

        return self._derive(op, run)

    def cache(self) -> "PartitionedDataset[T]":
        """Mark for materialization; the lineage runs at most once afterwards."""
        if not self.cached:
            self.cached = True
            self.lineage = self.lineage + ("cache",)
        return self

    def materialize(self) -> "PartitionedDataset[T]":
        """Execute the lineage now (no Σ_DP action, no driver charge)."""
        self._parts()
        return self

    # -- actions ---------------------------------------------------------

    @property
    def partitions(self) -> list[list[T]]:
        return [[v for _, v in part] for part in self._parts()]

    def collect(self) -> Collected:
        parts = self._parts()
        engine = self.engine
        stage = engine._begin_stage()
        values = [v for _, v in _merge(parts)]
        nbytes = sum(size_of(v) for v in values)
        try:
            engine._charge_driver(nbytes, f"collect@{stage}")
        except MemoryExceeded:
            engine._emit(stage, "collect", len(values), 0, 0)
            raise
        engine._emit(stage, "collect", len(values), len(values), 0)
        out = Collected(values)
        out.nbytes = nbytes
        return out

    def count(self) -> int:
        parts = self._parts()
        engine = self.engine
        stage = engine._begin_stage()
        engine._charge_driver(SCALAR_BYTES, f"count@{stage}")
        engine.driver_release(SCALAR_BYTES)
        n = sum(len(p) for p in parts)
        engine._emit(stage, "count", n, 1, 0)
        return n

    def reduce(self, op: Callable[[T, T], T], identity: Any = _MISSING) -> T:
        parts = self._parts()
        engine = self.engine
        stage = engine._begin_stage()
        partials = []
        for part in parts:
            if identity is _MISSING:
                if not part:
                    continue
                acc = part[0][1]
                rest = part[1:]
            else:
                acc = identity
                rest = part
            for key, v in rest:
                try:
                    acc = op(acc, v)
                except Exception as exc:  # noqa: BLE001
                    index = sum(1 for p in parts for k, _ in p if k < key)
                    raise UserFnError("reduce", index, exc, im_id=getattr(v, "im_id", None)) from exc
            partials.append(acc)
        if not partials:
            raise EmptyDataset("reduce of empty dataset with no identity")
        charged = sum(size_of(p) for p in partials)
        engine._charge_driver(charged, f"reduce@{stage}")
        try:
            result = partials[0]
            for p in partials[1:]:
                result = op(result, p)
            final = size_of(result)
            engine._charge_driver(final, f"reduce@{stage}")
            charged += final
        finally:
            engine.driver_release(charged)
        engine._emit(stage, "reduce", sum(len(p) for p in parts), 1, 0)
        return result

    def max_by(self, key: Callable[[T], Any]) -> T:
        """Reduce to the element with the largest ``key``.

        ``key`` must totally order the elements (fold in a tie-breaker) for the
        result to be independent of partitioning.
        """

        def pick(a, b):
            return b if key(b) > key(a) else a

        return self.reduce(pick)


def parallelize(items: Iterable[T], config: ExecConfig | None = None, engine: Engine | None = None) -> PartitionedDataset[T]:
    """Convenience wrapper creating an engine when none is supplied."""
    return (engine or Engine(config)).parallelize(items)
