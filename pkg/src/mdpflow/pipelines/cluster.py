"""Image clustering: colour-histogram features and k-means run through the engine.

S3's collective is Lloyd's algorithm expressed as engine stages: the
centroids are broadcast, a map assigns each feature vector, and a reduce
adds per-partition sums and counts. Initialization and empty-cluster
reseeding follow :func:`mdpflow.imgops.kmeans_fit` step for step (the same
RNG draws in the same order), so the two agree on every label.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..dataflow import CollectiveContext, ModuleSpec, ResultKind, ResultValue, Stage, StageLogic, execute_plan
from ..engine import Engine, ExecConfig, PartitionedDataset
from ..errors import BadParam
from ..imgops import Centroids, color_features, gaussian_blur
from ..imgops.kmeans import nearest, pick_weighted, sq_dists
from .common import PipelineResult, TaskId, as_layout, build_params, finish, make_plan, open_engine, retention_of, to_records

DEFAULTS = {
    "s1": {"sigma": 1.0},
    "s2": {"bins": 32},
    "s3": {"k": 2, "max_iters": 100, "tol": 1e-6, "seed": 0},
    "s4": {},
}


def _collect_release(engine: Engine, ds: PartitionedDataset) -> list:
    got = ds.collect()
    out = list(got)
    engine.driver_release(got.nbytes)
    return out


def _add_stats(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def engine_kmeans(engine: Engine, points: PartitionedDataset, k: int, max_iters: int = 100, tol: float = 1e-6, seed: int = 0) -> Centroids:
    """k-means over a dataset of ``(index, vector)`` pairs in index order."""
    points = points.cache()
    n = points.count()
    if not 1 <= k <= n:
        raise BadParam(f"k must be in [1, {n}], got {k}")
    if max_iters < 1 or tol < 0:
        raise BadParam("max_iters must be >= 1 and tol >= 0")

    def vector_at(i: int) -> np.ndarray:
        hit = _collect_release(engine, points.filter(lambda t: t[0] == i, name="select").map(lambda t: t[1], name="vector"))
        return np.asarray(hit[0], dtype=np.float64)

    def distances_to(c: np.ndarray) -> np.ndarray:
        b = engine.broadcast(c[None, :])
        return np.array(_collect_release(engine, points.map(lambda t: float(sq_dists(t[1][None, :], b.value)[0, 0]), name="d2")))

    rng = np.random.default_rng(seed)
    chosen = [vector_at(int(rng.integers(n)))]
    d2 = distances_to(chosen[0])
    while len(chosen) < k:
        chosen.append(vector_at(pick_weighted(d2, rng)))
        d2 = np.minimum(d2, distances_to(chosen[-1]))
    centers = np.array(chosen)
    dim = centers.shape[1]

    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        handle = engine.broadcast(centers)

        def assign(t, handle=handle):
            lab, dmin = nearest(t[1][None, :], handle.value)
            return (t[0], int(lab[0]), float(dmin[0]), t[1])

        assigned = points.map(assign, name="assign").cache()

        def contribution(a):
            sums = np.zeros((k, dim))
            counts = np.zeros(k, dtype=np.int64)
            sums[a[1]] = a[3]
            counts[a[1]] = 1
            return (sums, counts, a[2])

        zero = (np.zeros((k, dim)), np.zeros(k, dtype=np.int64), 0.0)
        sums, counts, _ = assigned.map(contribution, name="partial").reduce(_add_stats, zero)
        dmin = np.array(_collect_release(engine, assigned.map(lambda a: a[2], name="dmin")))
        history.append(float(dmin.sum()))
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        far = dmin.copy()
        for j in np.flatnonzero(~filled):
            idx = int(np.argmax(far))
            new[j] = vector_at(idx)
            far[idx] = -1.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    return Centroids(centers, iterations=it, objective_history=history)


def fit_centroids(ctx: CollectiveContext) -> dict:
    r = ctx.params
    pts = ctx.dataset.zip_with_index().map(lambda t: (t[1], t[0].metrics), name="features")
    return {"centroids": engine_kmeans(ctx.engine, pts, r["k"], r["max_iters"], r["tol"], r["seed"])}


class Clustering(StageLogic):
    def preprocess(self, raw, r):
        return gaussian_blur(raw, r["sigma"])

    def estimate(self, processed, r):
        return color_features(processed, r["bins"])

    def model(self, processed, metrics, r):
        return int(nearest(np.asarray(metrics)[None, :], r["centroids"].vectors)[0][0])

    def analyze(self, raw, processed, model, r):
        return model


def stages() -> list[ModuleSpec]:
    logic = Clustering()
    return [
        ModuleSpec(Stage.S1, logic),
        ModuleSpec(Stage.S2, logic),
        ModuleSpec(Stage.S3, logic, collective=fit_centroids, provides=frozenset({"centroids"}), needs=frozenset({"centroids"})),
        ModuleSpec(Stage.S4, logic),
    ]


def task_cluster(images, k: int = 2, plan_kind="minimal", config: ExecConfig | Engine | None = None, params: dict | None = None, retention=None) -> PipelineResult:
    t0 = time.perf_counter()
    if k < 1:
        raise BadParam("k must be >= 1")
    engine = open_engine(config)
    overrides = dict(params or {})
    overrides["s3"] = {**overrides.get("s3", {}), "k": k}
    ps = build_params(DEFAULTS, overrides)
    captured: dict = {}

    def finalize(eng, ds, bound):
        captured["centroids"] = bound.r_s4.get("centroids")
        items = _collect_release(eng, ds.map(lambda r: (r.im_id, r.result), name="project-result"))
        return ResultValue(ResultKind.LIST, items)

    plan = replace(make_plan(stages(), as_layout(plan_kind), result_kind=ResultKind.LIST, retention=retention_of(retention)), finalize=finalize)
    recs = to_records(images)
    if recs and k > len(recs):
        raise BadParam(f"k={k} exceeds the {len(recs)} images")
    if not recs:
        return finish(TaskId.CLUSTER, engine, ResultValue(ResultKind.LIST, []), {}, t0, plan, centroids=None)
    result, _ = execute_plan(plan, engine.parallelize(recs), engine, ps)
    return finish(TaskId.CLUSTER, engine, result, dict(result.items), t0, plan, centroids=captured.get("centroids"))
