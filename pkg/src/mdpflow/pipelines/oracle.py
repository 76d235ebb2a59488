"""Single-threaded reference implementations of every task (no engine, no records).

These loops call imgops directly and are the ground every layout is
compared against.
"""

from __future__ import annotations

import time

import numpy as np

from ..dataflow import ResultKind, ResultValue
from ..engine import RunStats
from ..errors import DegenerateConfiguration, InsufficientMatches, SingularHomography
from ..imgops import (
    Image,
    color_features,
    compute_histogram,
    connected_components,
    correlate_histograms,
    estimate_homography_ransac,
    extract_channel,
    extract_features,
    gaussian_blur,
    kmeans_fit,
    match_descriptors,
    matched_points,
    mean_histograms,
    otsu_from_counts,
    threshold_mask,
    to_gray,
    warp_merge,
)
from . import cluster, fcount, imatch, imreg, mosaic, obe
from .common import PipelineResult, TaskId, build_params


def _gray(img: Image) -> Image:
    return to_gray(img) if img.channels == 3 else img


def _result(task, kind, items, outputs, t0, **extras) -> PipelineResult:
    return PipelineResult(task, ResultValue(kind, items), outputs, RunStats(wall_ms=(time.perf_counter() - t0) * 1e3), None, extras)


def oracle_imatch(images, template: Image, params=None) -> PipelineResult:
    t0 = time.perf_counter()
    ps = build_params(imatch.DEFAULTS, params)
    kp, ratio = ps.r_s2["max_kp"], ps.r_s3["ratio_thresh"]
    tf = extract_features(_gray(template), kp)
    items = [(im_id, match_descriptors(extract_features(_gray(img), kp), tf, ratio)[1]) for im_id, img in images]
    best = None
    for im_id, r in items:
        if best is None or r > best[1] or (r == best[1] and im_id < best[0]):
            best = (im_id, r)
    return _result(TaskId.IMATCH, ResultKind.LIST, items, dict(items), t0, best=best)


def oracle_fcount(images, params=None) -> PipelineResult:
    t0 = time.perf_counter()
    ps = build_params(fcount.DEFAULTS, params)
    r1, r4 = ps.r_s1, ps.r_s4
    blurred = [(im_id, gaussian_blur(extract_channel(img, 2), r1["sigma"])) for im_id, img in images]
    hists = [compute_histogram(b, "B") for _, b in blurred]
    if not hists:
        return _result(TaskId.FCOUNT, ResultKind.LIST, [], {}, t0, mean_hist=None)
    mean = mean_histograms(hists)
    items = []
    for (im_id, b), h in zip(blurred, hists):
        corr = correlate_histograms(h, mean)
        counts = mean.bins if (not corr.degenerate and corr.value >= r4["corr_floor"]) else h.bins
        t = min(254, max(otsu_from_counts(counts), int(np.argmax(counts)) + r4["min_contrast"]))
        lab = connected_components(threshold_mask(b, t))
        items.append((im_id, int((lab.areas() >= r4["min_area"]).sum())))
    return _result(TaskId.FCOUNT, ResultKind.LIST, items, dict(items), t0, mean_hist=mean)


def oracle_obe(images, params=None) -> PipelineResult:
    t0 = time.perf_counter()
    ps = build_params(obe.DEFAULTS, params)
    outputs, items = {}, []
    for im_id, img in images:
        g = _gray(img)
        px = g.pixels
        if int(px.max()) - int(px.min()) < ps.r_s2["min_contrast"]:
            mask = np.zeros(px.shape, dtype=np.uint8)
        else:
            mask = threshold_mask(g, otsu_from_counts(np.bincount(px.ravel(), minlength=256))).pixels
        lab = connected_components(mask)
        areas = lab.areas()
        boxes = [b for b, a in zip(lab.boxes(), areas) if a >= ps.r_s4["min_area"]]
        outputs[im_id] = [tuple(b) for b in boxes]
        items.append((im_id, [Image(img.pixels[y0 : y1 + 1, x0 : x1 + 1]) for x0, y0, x1, y1 in boxes]))
    return _result(TaskId.OBE, ResultKind.IMAGES, items, outputs, t0, crops=dict(items))


def oracle_imreg(pairs, params=None) -> PipelineResult:
    t0 = time.perf_counter()
    ps = build_params(imreg.DEFAULTS, params)
    kp, r3 = ps.r_s2["max_kp"], ps.r_s3
    outputs, items = {}, []
    for im_id, pair in pairs:
        moving, reference = pair[0], pair[1]
        fm = extract_features(_gray(moving), kp)
        fr = extract_features(_gray(reference), kp)
        matches, _ = match_descriptors(fm, fr, r3["ratio_thresh"])
        src, dst = matched_points(fm, fr, matches)
        try:
            h, _ = estimate_homography_ransac(src, dst, r3["iters"], r3["inlier_px"], r3["seed"])
        except (InsufficientMatches, DegenerateConfiguration) as exc:
            outputs[im_id] = (None, type(exc).__name__)
            items.append((im_id, None))
            continue
        try:
            merged = warp_merge(reference, moving, h)
        except SingularHomography:
            outputs[im_id] = (None, "SingularHomography")
            items.append((im_id, None))
            continue
        outputs[im_id] = (h.matrix, "ok")
        items.append((im_id, merged))
    skipped = {k: f for k, (_, f) in outputs.items() if f != "ok"}
    return _result(TaskId.IMREG, ResultKind.IMAGES, items, outputs, t0, merged=dict(items), skipped=skipped)


def oracle_cluster(images, k: int, params=None) -> PipelineResult:
    t0 = time.perf_counter()
    overrides = dict(params or {})
    overrides["s3"] = {**overrides.get("s3", {}), "k": k}
    ps = build_params(cluster.DEFAULTS, overrides)
    if not images:
        return _result(TaskId.CLUSTER, ResultKind.LIST, [], {}, t0, centroids=None)
    feats = np.array([color_features(gaussian_blur(img, ps.r_s1["sigma"]), ps.r_s2["bins"]) for _, img in images])
    r3 = ps.r_s3
    cents = kmeans_fit(feats, k, r3["max_iters"], r3["tol"], r3["seed"])
    labels = cents.assign(feats)
    items = [(im_id, int(lab)) for (im_id, _), lab in zip(images, labels)]
    return _result(TaskId.CLUSTER, ResultKind.LIST, items, dict(items), t0, centroids=cents)


def oracle_mosaic(images, params=None) -> PipelineResult:
    """Naive greedy: rescan every untraversed image each iteration, take the best."""
    t0 = time.perf_counter()
    ps = build_params(mosaic.DEFAULTS, params)
    kp, r = ps.r_s2["max_kp"], ps.r_s3
    images = list(images)
    if not images:
        return _result(TaskId.MOSAIC, ResultKind.IMAGES, [], {}, t0, order=[], unmerged=[], flag=None)
    feats = [extract_features(_gray(img), kp) for _, img in images]
    canvas = images[0][1]
    tile_area = canvas.width * canvas.height
    left = list(range(1, len(images)))
    order, unmerged, flag = [images[0][0]], [], None
    while left:
        mf = mosaic.mosaic_features(canvas, tile_area, kp, r["mosaic_max_kp"])
        scores = [(match_descriptors(feats[i], mf, r["ratio_thresh"])[1], images[i][0], i) for i in left]
        top = max(s[0] for s in scores)
        ratio, im_id, i = min((s for s in scores if s[0] == top), key=lambda s: s[1])
        if ratio < r["floor"]:
            flag = mosaic.NO_VIABLE_MATCH
            break
        left.remove(i)
        merged = mosaic.merge_into(canvas, mf, images[i][1], feats[i], r)
        if merged is None:
            unmerged.append(im_id)
            continue
        canvas = merged
        order.append(im_id)
    return _result(TaskId.MOSAIC, ResultKind.IMAGES, [("mosaic", canvas)], {"mosaic": canvas}, t0, order=order, unmerged=unmerged, flag=flag)


def sequential_oracle(task: TaskId | str, inputs, params: dict | None = None, **kw) -> PipelineResult:
    task = TaskId(task)
    if task is TaskId.IMATCH:
        return oracle_imatch(inputs, kw["template"], params)
    if task is TaskId.CLUSTER:
        return oracle_cluster(inputs, kw.get("k", 2), params)
    if task is TaskId.FCOUNT:
        return oracle_fcount(inputs, params)
    if task is TaskId.OBE:
        return oracle_obe(inputs, params)
    if task is TaskId.IMREG:
        return oracle_imreg(inputs, params)
    return oracle_mosaic(inputs, params)
