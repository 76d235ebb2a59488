"""Shared plumbing for the reference tasks."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from ..dataflow import (
    Chunked,
    Layout,
    ModuleSpec,
    PackedRecord,
    ParamSet,
    PipelinePlan,
    ResultValue,
    Retention,
    build_minimal_plan,
    build_modular_plan,
)
from ..engine import Engine, ExecConfig, RunStats
from ..errors import BadParam
from ..imgops import Homography, Image, ImageBundle, LabelMap


class TaskId(str, enum.Enum):
    IMATCH = "imatch"
    CLUSTER = "cluster"
    FCOUNT = "fcount"
    OBE = "obe"
    IMREG = "imreg"
    MOSAIC = "mosaic"


# engine stages of the fused layout per task
N_S = {
    TaskId.IMATCH: 1,
    TaskId.CLUSTER: 2,
    TaskId.FCOUNT: 3,
    TaskId.OBE: 1,
    TaskId.IMREG: 1,
    TaskId.MOSAIC: 2,
}

# tasks whose split layout chunks a collective step
SPLIT_TASKS = (TaskId.FCOUNT, TaskId.MOSAIC)


@dataclass
class PipelineResult:
    task: TaskId
    result: ResultValue
    outputs: dict
    stats: RunStats
    plan: PipelinePlan | None = None
    extras: dict = field(default_factory=dict)

    @property
    def n_s(self) -> int | None:
        return self.plan.n_s if self.plan else None


def as_layout(plan_kind: str | Layout) -> Layout:
    if isinstance(plan_kind, Layout):
        return plan_kind
    aliases = {"fused": "minimal"}
    try:
        return Layout(aliases.get(plan_kind, plan_kind))
    except ValueError:
        raise BadParam(f"unknown layout {plan_kind!r}") from None


def make_plan(stages: Sequence[ModuleSpec], layout: Layout, split_size: int | None = None, **kw) -> PipelinePlan:
    """Modular: one group per stage. Minimal: fused. Split: fused with chunked collectives."""
    if layout is Layout.MODULAR:
        return build_modular_plan(stages, **kw)
    if layout is Layout.SPLIT:
        if split_size is None:
            raise BadParam("split layout needs a split_size")
        stages = [replace(m, chunking=Chunked(split_size)) if m.collective is not None else m for m in stages]
    return build_minimal_plan(stages, layout=layout, **kw)


def default_split(n: int) -> int:
    return max(1, math.ceil(n / 10))


def open_engine(config: ExecConfig | Engine | None) -> Engine:
    return config if isinstance(config, Engine) else Engine(config)


def to_records(items, bundle: bool = False) -> list[PackedRecord]:
    recs = []
    for im_id, value in items:
        if bundle and not isinstance(value, ImageBundle):
            value = ImageBundle(tuple(value))
        recs.append(PackedRecord(im_id, raw=value))
    return recs


def finish(task: TaskId, engine: Engine, result: ResultValue, outputs: dict, t0: float, plan=None, **extras) -> PipelineResult:
    stats = engine.snapshot()
    stats.wall_ms = (time.perf_counter() - t0) * 1e3
    return PipelineResult(task, result, outputs, stats, plan, dict(extras))


# -- equivalence -------------------------------------------------------------------


def close(a: float, b: float, rel: float = 1e-9) -> bool:
    return a == b or abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def values_equal(a: Any, b: Any, rel: float = 1e-9) -> bool:
    """Structural equality: exact for ints, strings and pixels, relative for floats."""
    if isinstance(a, (Image, LabelMap)) or isinstance(b, (Image, LabelMap)):
        return a == b
    if isinstance(a, Homography) and isinstance(b, Homography):
        return values_equal(a.matrix, b.matrix, rel)
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        x, y = np.asarray(a), np.asarray(b)
        if x.shape != y.shape:
            return False
        if x.dtype.kind in "fc" or y.dtype.kind in "fc":
            return bool(np.all((x == y) | (np.abs(x - y) <= rel * np.maximum(np.maximum(abs(x), abs(y)), 1e-12))))
        return bool(np.array_equal(x, y))
    if isinstance(a, float) or isinstance(b, float):
        return isinstance(a, (int, float)) and isinstance(b, (int, float)) and close(float(a), float(b), rel)
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(values_equal(a[k], b[k], rel) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(values_equal(x, y, rel) for x, y in zip(a, b))
    return a == b


def labels_equal_up_to_permutation(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    fwd: dict = {}
    back: dict = {}
    for k in a:
        x, y = a[k], b[k]
        if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
            return False
    return True


def permutation_agreement(pred: dict, truth: dict) -> float:
    """Best fraction of matching labels over all one-to-one relabelings (greedy on the confusion matrix)."""
    keys = list(truth)
    if not keys:
        return 1.0
    ps = sorted({pred[k] for k in keys})
    ts = sorted({truth[k] for k in keys})
    conf = np.zeros((len(ps), len(ts)), dtype=np.int64)
    for k in keys:
        conf[ps.index(pred[k]), ts.index(truth[k])] += 1
    from itertools import permutations

    if len(ps) <= 8 and len(ts) <= 8:
        best = 0
        small, large = (ps, ts) if len(ps) <= len(ts) else (ts, ps)
        mat = conf if len(ps) <= len(ts) else conf.T
        for perm in permutations(range(len(large)), len(small)):
            best = max(best, int(sum(mat[i, j] for i, j in enumerate(perm))))
        return best / len(keys)
    total = 0
    c = conf.copy()
    while c.size and c.max() > 0:
        i, j = np.unravel_index(np.argmax(c), c.shape)
        total += int(c[i, j])
        c[i, :] = 0
        c[:, j] = 0
    return total / len(keys)


def results_equal(task: TaskId | str, a: PipelineResult, b: PipelineResult) -> bool:
    """Task-aware equality used by the plan-equivalence checks."""
    task = TaskId(task)
    if task is TaskId.CLUSTER:
        return labels_equal_up_to_permutation(a.outputs, b.outputs)
    if task is TaskId.MOSAIC:
        return a.extras.get("order") == b.extras.get("order") and values_equal(a.outputs, b.outputs)
    return values_equal(a.outputs, b.outputs)


def params_with(defaults: dict, overrides: dict | None) -> dict:
    """Merge overrides into one stage's defaults, rejecting unknown keys."""
    out = dict(defaults)
    for k, v in (overrides or {}).items():
        if k not in defaults:
            raise BadParam(f"unknown parameter {k!r}")
        out[k] = v
    return out


def build_params(defaults: dict[str, dict], overrides: dict | None) -> ParamSet:
    overrides = overrides or {}
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise BadParam(f"unknown parameter block(s) {sorted(unknown)}")
    maps = {s: params_with(defaults[s], overrides.get(s)) for s in defaults}
    return ParamSet(maps.get("s1"), maps.get("s2"), maps.get("s3"), maps.get("s4"))


def retention_of(value: str | Retention | None) -> Retention:
    if value is None:
        return Retention.ALL
    if isinstance(value, Retention):
        return value
    for r in Retention:
        if value in (r.value, r.name.lower(), r.name):
            return r
    raise BadParam(f"unknown retention {value!r}")
