"""Acceptance criteria 1-11, each at its stated size and tolerance.

Run alone with ``pytest tests/test_acceptance.py -s``; each criterion prints
one ``criterion N [PASS|FAIL]`` line (also repeated in the terminal summary).
"""

import json
import random
import time

import numpy as np
import pytest

from mdpflow import datagen
from mdpflow.cli import main
from mdpflow.engine import ExecConfig
from mdpflow.errors import MemoryExceeded
from mdpflow.imgops import Histogram, Homography, Image, extract_features, to_gray
from mdpflow.pipelines import TaskId, layouts_for, results_equal, run_oracle, run_task
from mdpflow.pipelines.common import permutation_agreement
from mdpflow.storage import Encoding, FlatStore, KVStore, RecordEnvelope, ShardedStore

from programs import random_program, run_engine, run_oracle as run_list_program

HIST = Histogram(np.zeros(256)).size_bytes()


def test_c01_engine_oracle_equivalence(verdict):
    rng = random.Random(20240601)
    t0 = time.perf_counter()
    bad = []
    for i in range(500):
        prog = random_program(rng)
        want = run_list_program(prog)
        for parts in (1, 2, 3, 8):
            if run_engine(prog, parts) != want:
                bad.append((i, parts))
    secs = time.perf_counter() - t0
    ok = verdict(1, "engine == sequential oracle, 500 programs x P in {1,2,3,8}", not bad and secs < 60, f"{len(bad)} mismatches, {secs:.1f} s")
    assert ok, bad[:5]


def _desk_datasets():
    return {
        TaskId.IMATCH: datagen.gen_match_set(50, seed=11),
        TaskId.CLUSTER: datagen.gen_cluster_images(50, 3, seed=12, w=256, h=256),
        TaskId.FCOUNT: datagen.gen_flower_field(50, blobs_per_img=(0, 9), seed=13),
        TaskId.OBE: datagen.gen_object_scenes(50, seed=14),
        TaskId.IMREG: datagen.gen_warped_pairs(50, max_rotation_deg=5, outlier_rate=0.2, seed=15),
        TaskId.MOSAIC: datagen.gen_mosaic_tiles(50, 256, 256, step=100, seed=16),
    }


def test_c02_plan_equivalence(verdict):
    t0 = time.perf_counter()
    cfg = ExecConfig(num_workers=2, num_partitions=4)
    failed = []
    for task, ds in _desk_datasets().items():
        ref = run_oracle(task, ds)
        for layout in layouts_for(task):
            if not results_equal(task, run_task(task, ds, layout, cfg), ref):
                failed.append(f"{task.value}/{layout.value}")
    secs = time.perf_counter() - t0
    ok = verdict(2, "six tasks x layouts == oracle at n=50, 256x256", not failed and secs < 300, f"failed={failed or 'none'}, {secs:.1f} s")
    assert ok


def test_c03_driver_cap_forces_split(verdict):
    details, ok = [], True
    for n in (100, 1000):
        ds = datagen.gen_flower_field(n, 64, 64, blobs_per_img=(0, 2), seed=n)
        cap = int(0.5 * n * HIST)
        reference = run_task(TaskId.FCOUNT, ds, "minimal", ExecConfig()).outputs
        try:
            run_task(TaskId.FCOUNT, ds, "minimal", ExecConfig(driver_mem_cap=cap))
            fused = "ok"
        except MemoryExceeded as exc:
            fused = f"MemoryExceeded@{exc.stage}"
        split = run_task(TaskId.FCOUNT, ds, "split", ExecConfig(driver_mem_cap=cap), split_size=n // 10)
        good = fused == "MemoryExceeded@S3" and split.outputs == reference
        ok &= good
        details.append(f"n={n} fused={fused} split=ok equal={split.outputs == reference} highwater={split.stats.driver_highwater}/{cap}")
    assert verdict(3, "fused FCOUNT fails at S3 under cap, split succeeds", ok, "; ".join(details))


def test_c04_dataflow_overhead(verdict):
    ds = datagen.gen_warped_pairs(20, 128, 128, max_translation=10, max_rotation_deg=5, seed=21)
    mini = run_task(TaskId.IMREG, ds, "minimal", ExecConfig()).stats.flowed_bytes
    mod = run_task(TaskId.IMREG, ds, "modular", ExecConfig()).stats.flowed_bytes
    assert verdict(4, "flowed_bytes modular IMREG > minimal", mod > mini, f"modular={mod} minimal={mini} ratio={mod / mini:.2f}")


def test_c05_split_mean_exactness(verdict):
    rng = np.random.default_rng(5)
    worst, bad = 0.0, 0
    for i in range(100):
        n = int(rng.integers(1, 25))
        items = []
        for j in range(n):
            h, w = (int(v) for v in rng.integers(8, 40, 2))
            items.append((f"im{j:03d}", Image(rng.integers(0, 256, (h, w, 3)).astype(np.uint8))))
        ds = datagen.Dataset("rand", items, {}, 0, 0, i)
        cfg = ExecConfig(num_partitions=int(rng.integers(1, 5)))
        fused = run_task(TaskId.FCOUNT, ds, "minimal", cfg).extras["mean_hist"].bins
        for split in sorted({1, 7, n}):
            chunked = run_task(TaskId.FCOUNT, ds, "split", cfg, split_size=split).extras["mean_hist"].bins
            denom = np.maximum(np.abs(fused), 1e-300)
            rel = float(np.max(np.where(chunked == fused, 0.0, np.abs(chunked - fused) / denom)))
            worst = max(worst, rel)
            bad += rel > 1e-9
    assert verdict(5, "chunked mean histogram == fused within 1e-9 rel", bad == 0, f"100 datasets, worst rel={worst:.2e}")


def test_c06_mosaic_chunking_invariance(verdict):
    rng = random.Random(6)
    pools = {s: datagen.gen_mosaic_tiles(12, 128, 128, step=48, seed=s) for s in range(5)}
    mismatches = []
    for trial in range(50):
        pool = pools[trial % 5]
        count = rng.randint(4, 12)
        start = rng.randint(0, 12 - count)
        items = pool.items[start : start + count]
        rng.shuffle(items)
        ds = datagen.Dataset("tiles", items, {}, 128, 128, trial)
        ref = run_oracle(TaskId.MOSAIC, ds).extras
        for split in (1, 3, count):
            got = run_task(TaskId.MOSAIC, ds, "split", ExecConfig(num_partitions=3), split_size=split).extras
            if (got["order"], got["unmerged"], got["flag"]) != (ref["order"], ref["unmerged"], ref["flag"]):
                mismatches.append((trial, split))
    assert verdict(6, "mosaic order == full-scan oracle, 50 orderings x split {1,3,n}", not mismatches, f"{len(mismatches)} mismatches")


def _rms_reprojection(pair, rec_matrix, true_matrix) -> float:
    moving, reference = pair[0], pair[1]
    gray = to_gray(moving) if moving.channels == 3 else moving
    pts = extract_features(gray, 300).points
    truth = Homography(true_matrix).apply(pts)
    inside = (truth[:, 0] >= 0) & (truth[:, 0] <= reference.width - 1) & (truth[:, 1] >= 0) & (truth[:, 1] <= reference.height - 1)
    if rec_matrix is None or not inside.any():
        return float("inf")
    d = Homography(np.asarray(rec_matrix)).apply(pts[inside]) - truth[inside]
    return float(np.sqrt((d * d).sum(axis=1).mean()))


def test_c07_registration_accuracy(verdict):
    ds = datagen.gen_warped_pairs(100, noise_sigma=0.0, outlier_rate=0.2, seed=7)
    res = run_task(TaskId.IMREG, ds, "minimal", ExecConfig())
    errs = np.array([_rms_reprojection(p, res.outputs[k][0], ds.truth[k]["H"]) for k, p in ds.items])
    frac = float((errs < 1.0).mean())
    assert verdict(7, "RMS reprojection < 1 px on >= 95% of 100 pairs", frac >= 0.95, f"{frac:.0%} under 1 px, median {np.median(errs):.3f} px")


def test_c08_flower_count(verdict):
    ds = datagen.gen_flower_field(50, blobs_per_img=(0, 9), seed=8)
    res = run_task(TaskId.FCOUNT, ds, "split", ExecConfig(num_partitions=4))
    hits = sum(res.outputs[k] == t["count"] for k, t in ds.truth.items())
    spread = sorted({t["count"] for t in ds.truth.values()})
    assert verdict(8, "FCOUNT exact on every image, blobs 0..9", hits == len(ds), f"{hits}/{len(ds)} exact, planted counts {spread}")


def test_c09_kmeans_recovery(verdict):
    ds = datagen.gen_cluster_images(60, 3, palette_separation=0.5, seed=9)
    res = run_task(TaskId.CLUSTER, ds, "modular", ExecConfig(num_workers=2, num_partitions=3))
    agree = permutation_agreement(res.outputs, {k: t["label"] for k, t in ds.truth.items()})
    hist = res.extras["centroids"].objective_history
    monotone = all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))
    assert verdict(9, "k-means agreement >= 98%, objective non-increasing", agree >= 0.98 and monotone, f"agreement {agree:.1%}, {len(hist)} iterations, monotone={monotone}")


def test_c10_storage_fidelity(verdict, tmp_path):
    rng = np.random.default_rng(10)
    envs = [RecordEnvelope(f"payload/{i:04d}", rng.bytes(int(rng.integers(0, 2048))), Encoding(int(rng.integers(0, 3)))) for i in range(1000)]
    keys = [e.key for e in envs]
    stores = {
        "kv": KVStore(tmp_path / "kv.log"),
        "sharded": ShardedStore(tmp_path / "sh", shard_count=4),
        "flat": FlatStore(tmp_path / "flat"),
    }
    exact = {}
    for name, st in stores.items():
        st.write(envs)
        exact[name] = st.read(keys) == envs
    other = ShardedStore(tmp_path / "sh2", shard_count=4)
    other.write(envs)
    layout_same = all(
        stores["sharded"].shard_keys(i) == other.shard_keys(i)
        and (tmp_path / "sh" / f"shard-{i}" / "data.log").read_bytes() == (tmp_path / "sh2" / f"shard-{i}" / "data.log").read_bytes()
        for i in range(4)
    )
    reopened = KVStore(tmp_path / "kv.log").read(keys) == envs
    ok = all(exact.values()) and layout_same and reopened
    assert verdict(10, "1000 payloads bit-exact, sharding deterministic, KV reopen", ok, f"exact={exact} deterministic={layout_same} reopen={reopened}")


def test_c11_bench_determinism(verdict, tmp_path, capsys):
    args = ["--seed", "3", "bench", "--gen", "--sizes", "8", "--width", "128", "--height", "128", "--cap-fraction", "0.5"]
    rows = []
    for run in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / run)]) == 0
        lines = (tmp_path / run / "bench.jsonl").read_text().splitlines()
        rows.append([{k: v for k, v in json.loads(line).items() if k != "wall_ms"} for line in lines])
    capsys.readouterr()
    expected = sum(len(layouts_for(t)) for t in TaskId)
    ok = rows[0] == rows[1] and len(rows[0]) == expected
    assert verdict(11, "bench rows identical across runs (wall_ms excluded)", ok, f"{len(rows[0])} rows per run")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
