"""Pipeline spec files (TOML).

Example::

    task = "fcount"
    layout = "split"          # minimal | modular | split
    partitions = 4
    driver_mem_cap = 0        # bytes, 0 = unlimited
    split_size = 5            # optional, split layout only
    retention = "retain-all"  # or "drop-raw-after-S2"

    [params.s4]
    corr_floor = 0.9

    [storage]
    backend = "flat"          # flat | kv; text results. Images always go to the sharded store
    shard_count = 4
    replication_factor = 1

Keys are case-sensitive; an unknown key raises :class:`SpecError` naming it.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataflow import Layout, Retention
from .errors import SpecError
from .pipelines import SPLIT_TASKS, TaskId
from .pipelines import cluster, fcount, imatch, imreg, mosaic, obe

TOP_KEYS = {"task", "layout", "partitions", "workers", "driver_mem_cap", "split_size", "retention", "seed", "k", "params", "storage"}
STORAGE_KEYS = {"backend", "root", "shard_count", "replication_factor"}
STAGE_KEYS = ("s1", "s2", "s3", "s4")

TASK_DEFAULTS = {
    TaskId.IMATCH: imatch.DEFAULTS,
    TaskId.CLUSTER: cluster.DEFAULTS,
    TaskId.FCOUNT: fcount.DEFAULTS,
    TaskId.OBE: obe.DEFAULTS,
    TaskId.IMREG: imreg.DEFAULTS,
    TaskId.MOSAIC: mosaic.DEFAULTS,
}


@dataclass
class StorageSpec:
    aux: str = "flat"
    root: str | None = None
    shard_count: int = 4
    replication_factor: int = 1


@dataclass
class PipelineSpec:
    task: TaskId
    layout: Layout = Layout.MINIMAL
    partitions: int = 1
    workers: int | None = None
    driver_mem_cap: int = 0
    split_size: int | None = None
    retention: Retention = Retention.ALL
    seed: int = 0
    k: int | None = None
    params: dict = field(default_factory=dict)
    storage: StorageSpec = field(default_factory=StorageSpec)


def _int(doc: dict, key: str, low: int, where: str = "") -> int | None:
    if key not in doc:
        return None
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < low:
        raise SpecError(f"{where}{key} must be an integer >= {low}, got {v!r}", key)
    return v


def parse_spec(text: str) -> PipelineSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"spec is not valid TOML: {exc}") from exc
    for key in doc:
        if key not in TOP_KEYS:
            raise SpecError(f"unknown key {key!r}", key)
    if "task" not in doc:
        raise SpecError("missing required key 'task'", "task")
    try:
        task = TaskId(doc["task"])
    except ValueError:
        raise SpecError(f"unknown task {doc['task']!r}", "task") from None
    try:
        layout = Layout(doc.get("layout", "minimal"))
    except ValueError:
        raise SpecError(f"unknown layout {doc['layout']!r}", "layout") from None
    if layout is Layout.SPLIT and task not in SPLIT_TASKS:
        raise SpecError(f"task {task.value} has no split layout", "layout")
    retention = doc.get("retention", Retention.ALL.value)
    matches = [r for r in Retention if retention in (r.value, r.name.lower())]
    if not matches:
        raise SpecError(f"unknown retention {retention!r}", "retention")

    spec = PipelineSpec(task, layout, retention=matches[0])
    spec.partitions = _int(doc, "partitions", 1) or 1
    spec.workers = _int(doc, "workers", 1)
    spec.driver_mem_cap = _int(doc, "driver_mem_cap", 0) or 0
    spec.split_size = _int(doc, "split_size", 1)
    spec.seed = _int(doc, "seed", 0) or 0
    spec.k = _int(doc, "k", 1)

    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise SpecError("params must be a table", "params")
    defaults = TASK_DEFAULTS[task]
    for stage, block in params.items():
        if stage not in STAGE_KEYS:
            raise SpecError(f"unknown parameter block 'params.{stage}'", f"params.{stage}")
        if not isinstance(block, dict):
            raise SpecError(f"params.{stage} must be a table", f"params.{stage}")
        for key in block:
            if key not in defaults[stage]:
                raise SpecError(f"unknown parameter 'params.{stage}.{key}' for task {task.value}", f"params.{stage}.{key}")
    spec.params = {s: dict(b) for s, b in params.items()}

    storage = doc.get("storage", {})
    if not isinstance(storage, dict):
        raise SpecError("storage must be a table", "storage")
    for key in storage:
        if key not in STORAGE_KEYS:
            raise SpecError(f"unknown key 'storage.{key}'", f"storage.{key}")
    aux = storage.get("backend", "flat")
    if aux not in ("flat", "kv"):
        raise SpecError(f"storage.backend must be 'flat' or 'kv', got {aux!r}", "storage.backend")
    spec.storage = StorageSpec(
        aux,
        storage.get("root"),
        _int(storage, "shard_count", 1, "storage.") or 4,
        _int(storage, "replication_factor", 1, "storage.") or 1,
    )
    return spec


def load_spec(path: str | Path) -> PipelineSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec file {path}: {exc}") from exc
    return parse_spec(text)
