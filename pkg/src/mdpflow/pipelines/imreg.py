"""Image registration: homography of each (moving, reference) pair and the warped merge.

Records carry the pair as an :class:`ImageBundle` in the raw slot and the
gray bundle in the processed slot, so every module boundary of the modular
layout moves both images.
"""

from __future__ import annotations

import time
from dataclasses import replace

from ..dataflow import ModuleSpec, ResultKind, ResultValue, Stage, StageLogic, execute_plan
from ..engine import Engine, ExecConfig
from ..errors import DegenerateConfiguration, InsufficientMatches, SingularHomography
from ..imgops import (
    Homography,
    ImageBundle,
    estimate_homography_ransac,
    extract_features,
    match_descriptors,
    matched_points,
    warp_merge,
)
from .common import PipelineResult, TaskId, as_layout, build_params, finish, make_plan, open_engine, retention_of, to_records
from .imatch import gray_of

DEFAULTS = {
    "s1": {},
    "s2": {"max_kp": 300},
    "s3": {"ratio_thresh": 0.8, "iters": 500, "inlier_px": 2.0, "seed": 0},
    "s4": {},
}

OK = "ok"


def register(moving_fs, reference_fs, r) -> Homography | str:
    """Homography mapping moving -> reference coordinates, or the name of the failure."""
    matches, _ = match_descriptors(moving_fs, reference_fs, r["ratio_thresh"])
    src, dst = matched_points(moving_fs, reference_fs, matches)
    try:
        h, _ = estimate_homography_ransac(src, dst, r["iters"], r["inlier_px"], r["seed"])
    except (InsufficientMatches, DegenerateConfiguration) as exc:
        return type(exc).__name__
    return h


def merge_pair(raw: ImageBundle, h: Homography | str):
    """``(merged image | None, homography | None, flag)`` for one pair."""
    if isinstance(h, str):
        return (None, None, h)
    moving, reference = raw[0], raw[1]
    try:
        return (warp_merge(reference, moving, h), h, OK)
    except SingularHomography:
        return (None, None, "SingularHomography")


class Registration(StageLogic):
    def preprocess(self, raw, r):
        return ImageBundle(tuple(gray_of(im) for im in raw))

    def estimate(self, processed, r):
        return tuple(extract_features(im, r["max_kp"]) for im in processed)

    def model(self, processed, metrics, r):
        return register(metrics[0], metrics[1], r)

    def analyze(self, raw, processed, model, r):
        return merge_pair(raw, model)


def stages() -> list[ModuleSpec]:
    logic = Registration()
    return [ModuleSpec(s, logic) for s in (Stage.S1, Stage.S2, Stage.S3, Stage.S4)]


def task_imreg(image_pairs, plan_kind="minimal", config: ExecConfig | Engine | None = None, params: dict | None = None, retention=None) -> PipelineResult:
    t0 = time.perf_counter()
    engine = open_engine(config)
    ps = build_params(DEFAULTS, params)

    def finalize(eng, ds, bound):
        got = ds.map(lambda r: (r.im_id, r.result), name="project-result").collect()
        items = list(got)
        eng.driver_release(got.nbytes)
        outputs = {k: (v[1].matrix if v[1] is not None else None, v[2]) for k, v in items}
        return ResultValue(ResultKind.IMAGES, [(k, v[0]) for k, v in items], {"registrations": outputs})

    plan = replace(make_plan(stages(), as_layout(plan_kind), result_kind=ResultKind.IMAGES, retention=retention_of(retention)), finalize=finalize)
    result, _ = execute_plan(plan, engine.parallelize(to_records(image_pairs, bundle=True)), engine, ps)
    outputs = result.extras["registrations"]
    skipped = {k: flag for k, (_, flag) in outputs.items() if flag != OK}
    return finish(TaskId.IMREG, engine, result, outputs, t0, plan, merged=dict(result.items), skipped=skipped)
