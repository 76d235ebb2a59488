"""Reference image tasks in fused, modular and split layouts."""

from __future__ import annotations

from ..dataflow import Layout
from ..engine import Engine, ExecConfig
from ..errors import BadParam
from .cluster import engine_kmeans, task_cluster
from .common import N_S, SPLIT_TASKS, PipelineResult, TaskId, as_layout, default_split, results_equal
from .fcount import task_fcount
from .imatch import task_imatch
from .imreg import task_imreg
from .mosaic import task_mosaic
from .obe import task_obe
from .oracle import sequential_oracle


def layouts_for(task: TaskId | str) -> tuple[Layout, ...]:
    task = TaskId(task)
    if task in SPLIT_TASKS:
        return (Layout.MINIMAL, Layout.MODULAR, Layout.SPLIT)
    return (Layout.MINIMAL, Layout.MODULAR)


def task_inputs(task: TaskId, dataset) -> dict:
    """Task-specific arguments carried by a generated dataset."""
    if task is TaskId.IMATCH:
        tid = dataset.params.get("template")
        lookup = dict(dataset.items)
        if tid is None and dataset.items:
            tid = dataset.items[0][0]
        if tid is None:
            raise BadParam("image matching needs a template image")
        return {"template": lookup[tid]}
    if task is TaskId.CLUSTER:
        return {"k": int(dataset.params.get("k", 2))}
    return {}


def run_task(
    task: TaskId | str,
    dataset,
    layout: Layout | str = Layout.MINIMAL,
    config: ExecConfig | Engine | None = None,
    split_size: int | None = None,
    params: dict | None = None,
    retention=None,
) -> PipelineResult:
    """Run one task on a :class:`~mdpflow.datagen.Dataset` under the given layout."""
    task = TaskId(task)
    layout = as_layout(layout)
    if layout is Layout.SPLIT and task not in SPLIT_TASKS:
        raise BadParam(f"{task.value} has no split layout")
    items = dataset.items
    extra = task_inputs(task, dataset)
    if task is TaskId.IMATCH:
        return task_imatch(items, extra["template"], layout, config, params, retention)
    if task is TaskId.CLUSTER:
        return task_cluster(items, extra["k"], layout, config, params, retention)
    if task is TaskId.FCOUNT:
        if layout is Layout.SPLIT and split_size is None:
            split_size = default_split(len(items))
        return task_fcount(items, layout, config, split_size if layout is Layout.SPLIT else None, params, retention)
    if task is TaskId.OBE:
        return task_obe(items, layout, config, params, retention)
    if task is TaskId.IMREG:
        return task_imreg(items, layout, config, params, retention)
    if layout is Layout.SPLIT:
        split = split_size or default_split(len(items))
    else:
        split = None
    return task_mosaic(items, split, config, layout, params, retention)


def run_oracle(task: TaskId | str, dataset, params: dict | None = None) -> PipelineResult:
    task = TaskId(task)
    return sequential_oracle(task, dataset.items, params, **task_inputs(task, dataset))


__all__ = [
    "N_S",
    "PipelineResult",
    "TaskId",
    "engine_kmeans",
    "layouts_for",
    "results_equal",
    "run_oracle",
    "run_task",
    "sequential_oracle",
    "task_cluster",
    "task_fcount",
    "task_imatch",
    "task_imreg",
    "task_mosaic",
    "task_obe",
]
