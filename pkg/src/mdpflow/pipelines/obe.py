"""Object extraction: Otsu foreground, connected components, boxes and crops."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..dataflow import ModuleSpec, ResultKind, ResultValue, Stage, StageLogic, execute_plan
from ..engine import Engine, ExecConfig
from ..imgops import Image, connected_components, otsu_from_counts, threshold_mask
from .common import PipelineResult, TaskId, as_layout, build_params, finish, make_plan, open_engine, retention_of, to_records
from .imatch import gray_of

DEFAULTS = {
    "s1": {},
    "s2": {"min_contrast": 20},
    "s3": {},
    "s4": {"min_area": 16},
}


def foreground_threshold(gray: Image, min_contrast: int) -> int | None:
    """Otsu level, or None when the image has too little contrast to hold objects."""
    px = gray.pixels
    if int(px.max()) - int(px.min()) < min_contrast:
        return None
    return otsu_from_counts(np.bincount(px.ravel(), minlength=256))


def extract_objects(raw: Image, labels, min_area: int):
    """``(boxes, crops)`` for components of at least ``min_area`` pixels, in label order."""
    keep = labels.areas() >= min_area
    boxes = [b for b, k in zip(labels.boxes(), keep) if k]
    crops = [Image(raw.pixels[y0 : y1 + 1, x0 : x1 + 1]) for x0, y0, x1, y1 in boxes]
    return boxes, crops


class ObjectExtraction(StageLogic):
    def preprocess(self, raw, r):
        return gray_of(raw)

    def estimate(self, processed, r):
        t = foreground_threshold(processed, r["min_contrast"])
        return -1 if t is None else t

    def model(self, processed, metrics, r):
        if metrics < 0:
            return connected_components(np.zeros(processed.pixels.shape, dtype=np.uint8))
        return connected_components(threshold_mask(processed, metrics))

    def analyze(self, raw, processed, model, r):
        boxes, crops = extract_objects(raw, model, r["min_area"])
        return (tuple(boxes), tuple(crops))


def stages() -> list[ModuleSpec]:
    logic = ObjectExtraction()
    return [ModuleSpec(s, logic) for s in (Stage.S1, Stage.S2, Stage.S3, Stage.S4)]


def task_obe(images, plan_kind="minimal", config: ExecConfig | Engine | None = None, params: dict | None = None, retention=None) -> PipelineResult:
    t0 = time.perf_counter()
    engine = open_engine(config)
    ps = build_params(DEFAULTS, params)

    def finalize(eng, ds, bound):
        got = ds.map(lambda r: (r.im_id, r.result), name="project-result").collect()
        items = list(got)
        eng.driver_release(got.nbytes)
        boxes = {k: [tuple(b) for b in v[0]] for k, v in items}
        return ResultValue(ResultKind.IMAGES, [(k, list(v[1])) for k, v in items], {"boxes": boxes})

    plan = replace(make_plan(stages(), as_layout(plan_kind), result_kind=ResultKind.IMAGES, retention=retention_of(retention)), finalize=finalize)
    result, _ = execute_plan(plan, engine.parallelize(to_records(images)), engine, ps)
    return finish(TaskId.OBE, engine, result, result.extras["boxes"], t0, plan, crops=dict(result.items))
