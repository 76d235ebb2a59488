"""Image matching: match ratio of every image against one broadcast template."""

from __future__ import annotations

import time
from dataclasses import replace

from ..dataflow import ModuleSpec, ResultKind, ResultValue, Stage, StageLogic, execute_plan
from ..engine import Engine, ExecConfig
from ..imgops import Image, extract_features, match_descriptors, to_gray
from .common import PipelineResult, TaskId, as_layout, build_params, finish, make_plan, open_engine, retention_of, to_records

DEFAULTS = {
    "s1": {},
    "s2": {"max_kp": 200},
    "s3": {"ratio_thresh": 0.8},
    "s4": {},
}


def gray_of(img: Image) -> Image:
    return to_gray(img) if img.channels == 3 else img


def best_match(pairs):
    """Highest ratio; ties go to the lowest im_id."""
    best = None
    for im_id, ratio in pairs:
        if best is None or ratio > best[1] or (ratio == best[1] and im_id < best[0]):
            best = (im_id, ratio)
    return best


def _pick(a, b):
    if b[1] > a[1] or (b[1] == a[1] and b[0] < a[0]):
        return b
    return a


class ImageMatch(StageLogic):
    def preprocess(self, raw, r):
        return gray_of(raw)

    def estimate(self, processed, r):
        return extract_features(processed, r["max_kp"])

    def model(self, processed, metrics, r):
        return match_descriptors(metrics, r["template"].value, r["ratio_thresh"])[1]

    def analyze(self, raw, processed, model, r):
        return model


def stages() -> list[ModuleSpec]:
    logic = ImageMatch()
    return [
        ModuleSpec(Stage.S1, logic),
        ModuleSpec(Stage.S2, logic),
        ModuleSpec(Stage.S3, logic),
        ModuleSpec(Stage.S4, logic),
    ]


def template_features(template: Image, max_kp: int):
    return extract_features(gray_of(template), max_kp)


def task_imatch(images, template: Image, plan_kind="minimal", config: ExecConfig | Engine | None = None, params: dict | None = None, retention=None) -> PipelineResult:
    t0 = time.perf_counter()
    layout = as_layout(plan_kind)
    engine = open_engine(config)
    ps = build_params(DEFAULTS, params)
    handle = engine.broadcast(template_features(template, ps.r_s2["max_kp"]))
    ps = ps.bind(Stage.S3, {"template": handle})

    def finalize(eng, ds, bound):
        pairs = ds.map(lambda r: (r.im_id, r.result), name="project-result")
        best = pairs.reduce(_pick) if pairs.count() else None
        got = pairs.collect()
        items = list(got)
        eng.driver_release(got.nbytes)
        return ResultValue(ResultKind.LIST, items, {"best": best})

    plan = replace(make_plan(stages(), layout, result_kind=ResultKind.LIST, retention=retention_of(retention)), finalize=finalize)
    result, _ = execute_plan(plan, engine.parallelize(to_records(images)), engine, ps)
    return finish(TaskId.IMATCH, engine, result, dict(result.items), t0, plan, best=result.extras["best"])
