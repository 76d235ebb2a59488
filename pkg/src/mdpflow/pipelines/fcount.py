"""Flower counting: B channel, dataset-mean histogram, thresholded blob count.

S1 extracts and blurs the B channel, S2 takes its histogram, S3 averages
the histograms over the whole dataset on the driver and S4 thresholds each
image and counts blobs. The threshold comes from the dataset mean unless
the image's own histogram correlates poorly with it (``corr_floor``).

The S3 mean has two routes. Fused and modular layouts collect every
histogram to the driver at once. The split layout zips the records with
their index and collects one chunk of ``split_size`` histograms at a time,
folding each into a running sum and releasing it before the next.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..dataflow import (
    CollectiveContext,
    Layout,
    ModuleSpec,
    ResultKind,
    ResultValue,
    StageLogic,
    Stage,
    execute_plan,
)
from ..engine import ExecConfig, Engine
from ..errors import BadChannels, BadParam
from ..imgops import (
    Histogram,
    compute_histogram,
    connected_components,
    correlate_histograms,
    extract_channel,
    gaussian_blur,
    mean_histograms,
    otsu_from_counts,
    threshold_mask,
)
from ..sizing import size_of
from .common import (
    PipelineResult,
    TaskId,
    as_layout,
    build_params,
    default_split,
    finish,
    make_plan,
    open_engine,
    retention_of,
    to_records,
)

B_CHANNEL = 2

DEFAULTS = {
    "s1": {"sigma": 1.0},
    "s2": {},
    "s3": {},
    "s4": {"corr_floor": 0.9, "min_contrast": 40, "min_area": 10},
}


def blob_threshold(counts: np.ndarray, min_contrast: int) -> int:
    """Otsu split, kept at least ``min_contrast`` levels above the dominant level."""
    t = max(otsu_from_counts(counts), int(np.argmax(counts)) + int(min_contrast))
    return min(t, 254)


def count_blobs(processed, t: int, min_area: int) -> int:
    labels = connected_components(threshold_mask(processed, t))
    return int((labels.areas() >= min_area).sum())


class FlowerCount(StageLogic):
    def preprocess(self, raw, r):
        if raw.channels != 3:
            raise BadChannels("flower counting expects RGB images")
        return gaussian_blur(extract_channel(raw, B_CHANNEL), r["sigma"])

    def estimate(self, processed, r):
        return compute_histogram(processed, "B")

    def analyze(self, raw, processed, model, r):
        mean = r["mean_hist"]
        own = compute_histogram(processed, "B")
        corr = correlate_histograms(own, mean)
        source = mean if (not corr.degenerate and corr.value >= r["corr_floor"]) else own
        t = blob_threshold(source.bins, r["min_contrast"])
        return count_blobs(processed, t, r["min_area"])


def collect_mean(ctx: CollectiveContext) -> dict:
    """Whole-dataset collect of the S2 histograms, then the mean on the driver."""
    engine = ctx.engine
    hists = ctx.dataset.map(lambda rec: rec.metrics, name="project-hist").collect()
    try:
        mean = mean_histograms(list(hists)) if hists else None
    finally:
        engine.driver_release(hists.nbytes)
    return {"mean_hist": mean}


def chunked_mean(ctx: CollectiveContext) -> dict:
    """Index ranges of ``split_size`` histograms collected, summed and released in turn."""
    engine = ctx.engine
    split = ctx.module.chunking.split_size
    indexed = ctx.dataset.zip_with_index().cache()
    n = indexed.count()
    if n == 0:
        return {"mean_hist": None}
    acc_bytes = size_of(Histogram(np.zeros(256), "B"))
    engine.charge_driver(acc_bytes, "split-accumulator")
    try:
        total = np.zeros(256, dtype=np.float64)
        channel = "B"
        for start in range(0, n, split):
            end = start + split
            chunk = indexed.filter(lambda t, s=start, e=end: s <= t[1] < e, name="chunk").map(lambda t: t[0].metrics, name="project-hist").collect()
            try:
                for h in chunk:
                    total += h.bins
                    channel = h.channel
            finally:
                engine.driver_release(chunk.nbytes)
        mean = Histogram(total / n, channel)
    finally:
        engine.driver_release(acc_bytes)
    return {"mean_hist": mean}


def _mean_step(ctx: CollectiveContext) -> dict:
    return chunked_mean(ctx) if ctx.module.chunking is not None else collect_mean(ctx)


def stages() -> list[ModuleSpec]:
    logic = FlowerCount()
    return [
        ModuleSpec(Stage.S1, logic),
        ModuleSpec(Stage.S2, logic),
        ModuleSpec(Stage.S3, logic, collective=_mean_step, provides=frozenset({"mean_hist"}), per_record=False),
        ModuleSpec(Stage.S4, logic, needs=frozenset({"mean_hist"}), requires=("processed",)),
    ]


def task_fcount(images, plan_kind="minimal", config: ExecConfig | Engine | None = None, split_size: int | None = None, params: dict | None = None, retention=None) -> PipelineResult:
    t0 = time.perf_counter()
    layout = as_layout(plan_kind)
    recs = to_records(images)
    if split_size is None and layout is Layout.SPLIT:
        split_size = default_split(len(recs))
    if split_size is not None and split_size < 1:
        raise BadParam("split_size must be >= 1")
    plan = make_plan(stages(), layout, split_size, result_kind=ResultKind.LIST, retention=retention_of(retention))
    engine = open_engine(config)
    ps = build_params(DEFAULTS, params)
    captured: dict = {}

    def finalize(eng, ds, bound):
        captured["mean_hist"] = bound.r_s4.get("mean_hist")
        pairs = ds.map(lambda r: (r.im_id, r.result), name="project-result").collect()
        items = list(pairs)
        eng.driver_release(pairs.nbytes)
        return ResultValue(ResultKind.LIST, items)

    plan = replace(plan, finalize=finalize)
    result, _ = execute_plan(plan, engine.parallelize(recs), engine, ps)
    return finish(TaskId.FCOUNT, engine, result, dict(result.items), t0, plan, mean_hist=captured.get("mean_hist"))
