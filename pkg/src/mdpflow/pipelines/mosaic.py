"""Greedy mosaic accretion with a chunked scan over the untraversed images.

Starting from image 0, each outer iteration broadcasts the features of the
current mosaic, scores every untraversed image chunk by chunk (index ranges
of ``split_size``), keeps the best candidate across chunks and warps it into
the mosaic. Candidates are ranked by match ratio, ties going to the lowest
im_id, so the selection order does not depend on ``split_size``. The loop
stops when everything is traversed or the best ratio falls under ``floor``.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..dataflow import Chunked, CollectiveContext, Layout, ModuleSpec, ResultKind, ResultValue, Stage, StageLogic, execute_plan
from ..engine import Engine, ExecConfig
from ..errors import BadParam, DegenerateConfiguration, InsufficientMatches, SingularHomography
from ..imgops import Homography, Image, estimate_homography_ransac, extract_features, match_descriptors, matched_points, warp_merge
from .common import PipelineResult, TaskId, as_layout, build_params, finish, make_plan, open_engine, retention_of, to_records
from .imatch import gray_of

DEFAULTS = {
    "s1": {},
    "s2": {"max_kp": 200},
    "s3": {"ratio_thresh": 0.8, "floor": 0.05, "mosaic_max_kp": 2000, "iters": 500, "inlier_px": 2.0, "seed": 0, "min_inliers": 6},
    "s4": {},
}

NO_VIABLE_MATCH = "NoViableMatch"


def better(a, b):
    """Candidate ``(ratio, im_id, index)`` ranking: higher ratio, then lower im_id."""
    if a is None:
        return b
    if b is None:
        return a
    if b[0] > a[0] or (b[0] == a[0] and b[1] < a[1]):
        return b
    return a


def mosaic_features(mosaic: Image, tile_area: int, max_kp: int, cap: int):
    """Features of the mosaic with a keypoint budget proportional to its area."""
    budget = min(cap, max(max_kp, int(max_kp * mosaic.width * mosaic.height / max(1, tile_area))))
    return extract_features(gray_of(mosaic), budget)


def plausible(h: Homography, inliers: int, base: Image, tile: Image, min_inliers: int) -> bool:
    """Reject fits that scale the tile far from 1:1 or would grow the canvas past one extra tile."""
    det = float(np.linalg.det(h.matrix[:2, :2]))
    if inliers < min_inliers or not 0.5 <= det <= 2.0:
        return False
    corners = np.array([[0, 0], [tile.width - 1, 0], [0, tile.height - 1], [tile.width - 1, tile.height - 1]], dtype=np.float64)
    m = h.apply(corners)
    w = max(base.width - 1.0, m[:, 0].max()) - min(0.0, m[:, 0].min()) + 1
    hh = max(base.height - 1.0, m[:, 1].max()) - min(0.0, m[:, 1].min()) + 1
    return w <= base.width + tile.width and hh <= base.height + tile.height


def merge_into(mosaic: Image, mfeat, tile: Image, tfeat, r) -> Image | None:
    """Warp ``tile`` onto the mosaic canvas; None when no plausible homography is found."""
    matches, _ = match_descriptors(tfeat, mfeat, r["ratio_thresh"])
    src, dst = matched_points(tfeat, mfeat, matches)
    try:
        h, inliers = estimate_homography_ransac(src, dst, r["iters"], r["inlier_px"], r["seed"])
        if not plausible(h, inliers, mosaic, tile, r["min_inliers"]):
            return None
        return warp_merge(mosaic, tile, h)
    except (InsufficientMatches, DegenerateConfiguration, SingularHomography):
        return None


def greedy_mosaic(ctx: CollectiveContext) -> dict:
    engine = ctx.engine
    r = ctx.params
    indexed = ctx.dataset.zip_with_index().cache()
    n = indexed.count()
    if n == 0:
        return {"mosaic": None, "order": [], "unmerged": [], "flag": None}
    split = ctx.module.chunking.split_size if ctx.module.chunking is not None else n

    def fetch(i: int):
        got = indexed.filter(lambda t: t[1] == i, name="select").collect()
        engine.driver_release(got.nbytes)
        return got[0][0]

    first = fetch(0)
    mosaic = first.raw
    tile_area = mosaic.width * mosaic.height
    traversed = {0}
    order = [first.im_id]
    unmerged: list[str] = []
    flag = None
    while len(traversed) < n:
        mfeat = engine.broadcast(mosaic_features(mosaic, tile_area, r["max_kp"], r["mosaic_max_kp"]))
        done = frozenset(traversed)
        best = None
        for start in range(0, n, split):
            end = min(n, start + split)
            if all(i in done for i in range(start, end)):
                continue
            chunk = indexed.filter(lambda t, s=start, e=end: t[1] not in done and s <= t[1] < e, name="chunk")
            scored = chunk.map(
                lambda t: (match_descriptors(t[0].metrics, mfeat.value, r["ratio_thresh"])[1], t[0].im_id, t[1]),
                name="match-ratio",
            )
            best = better(best, scored.reduce(better, None))
        if best is None:
            break
        if best[0] < r["floor"]:
            flag = NO_VIABLE_MATCH
            break
        rec = fetch(best[2])
        traversed.add(best[2])
        merged = merge_into(mosaic, mfeat.value, rec.raw, rec.metrics, r)
        if merged is None:
            unmerged.append(rec.im_id)
            continue
        mosaic = merged
        order.append(rec.im_id)
    return {"mosaic": mosaic, "order": order, "unmerged": unmerged, "flag": flag}


class Mosaic(StageLogic):
    def preprocess(self, raw, r):
        return gray_of(raw)

    def estimate(self, processed, r):
        return extract_features(processed, r["max_kp"])


def stages() -> list[ModuleSpec]:
    logic = Mosaic()
    return [
        ModuleSpec(Stage.S1, logic),
        ModuleSpec(Stage.S2, logic),
        ModuleSpec(Stage.S3, logic, collective=greedy_mosaic, provides=frozenset({"mosaic", "order"}), per_record=False),
    ]


def task_mosaic(images, split_size: int | None = None, config: ExecConfig | Engine | None = None, plan_kind="minimal", params: dict | None = None, retention=None) -> PipelineResult:
    """``split_size`` of None scans all untraversed images as one chunk."""
    t0 = time.perf_counter()
    if split_size is not None and split_size < 1:
        raise BadParam("split_size must be >= 1")
    recs = to_records(images)
    if len(recs) == 1:
        raise BadParam("a mosaic needs at least 2 images")
    layout = as_layout(plan_kind)
    engine = open_engine(config)
    ps = build_params(DEFAULTS, params)
    ps = ps.bind(Stage.S3, {"max_kp": ps.r_s2["max_kp"]})
    # the greedy step always scans in chunks; one chunk when split_size is unset
    chunk = split_size if split_size is not None else max(1, len(recs))
    stage_list = stages()
    stage_list[2] = replace(stage_list[2], chunking=Chunked(chunk))
    plan_layout = Layout.MINIMAL if layout is Layout.SPLIT else layout
    captured: dict = {}

    def finalize(eng, ds, bound):
        s3 = bound.r_s3
        captured.update({k: s3.get(k) for k in ("order", "unmerged", "flag")})
        mosaic = s3.get("mosaic")
        return ResultValue(ResultKind.IMAGES, [("mosaic", mosaic)] if mosaic is not None else [])

    plan = replace(make_plan(stage_list, plan_layout, result_kind=ResultKind.IMAGES, retention=retention_of(retention)), layout=layout, finalize=finalize)
    result, _ = execute_plan(plan, engine.parallelize(recs), engine, ps)
    return finish(TaskId.MOSAIC, engine, result, dict(result.items), t0, plan, **captured)
