import numpy as np
import pytest

from mdpflow import datagen
from mdpflow.dataflow import Layout, Retention
from mdpflow.engine import ExecConfig
from mdpflow.errors import BadParam, MemoryExceeded
from mdpflow.pipelines import N_S, TaskId, layouts_for, results_equal, run_oracle, run_task
from mdpflow.pipelines.common import permutation_agreement
from mdpflow.pipelines.fcount import blob_threshold

CFG = ExecConfig(num_workers=2, num_partitions=3)

SMALL = {
    TaskId.FCOUNT: lambda: datagen.gen_flower_field(8, 128, 128, blobs_per_img=(0, 5), seed=1),
    TaskId.IMATCH: lambda: datagen.gen_match_set(6, 96, 96, seed=1),
    TaskId.OBE: lambda: datagen.gen_object_scenes(6, 128, 128, seed=1),
    TaskId.IMREG: lambda: datagen.gen_warped_pairs(4, 128, 128, max_translation=8, max_rotation_deg=4, seed=1),
    TaskId.CLUSTER: lambda: datagen.gen_cluster_images(8, 2, seed=1, w=32, h=32),
    TaskId.MOSAIC: lambda: datagen.gen_mosaic_tiles(4, seed=1),
}


@pytest.mark.parametrize("task", list(TaskId))
def test_every_layout_matches_oracle(task):
    ds = SMALL[task]()
    ref = run_oracle(task, ds)
    for layout in layouts_for(task):
        res = run_task(task, ds, layout, CFG, split_size=3)
        assert results_equal(task, res, ref), (task, layout)
        if layout is Layout.MINIMAL:
            assert res.n_s == N_S[task]


def test_fcount_counts_and_split_memory():
    ds = datagen.gen_flower_field(10, 128, 128, blobs_per_img=(0, 9), seed=3)
    n = len(ds)
    res = run_task(TaskId.FCOUNT, ds, "split", ExecConfig(driver_mem_cap=n * 2064 // 2), split_size=1)
    assert res.outputs == {k: t["count"] for k, t in ds.truth.items()}
    with pytest.raises(MemoryExceeded) as info:
        run_task(TaskId.FCOUNT, ds, "minimal", ExecConfig(driver_mem_cap=n * 2064 // 2))
    assert info.value.stage == "S3"


def test_blob_threshold_rule():
    counts = np.zeros(256)
    counts[40] = 100
    counts[200] = 5
    assert blob_threshold(counts, 40) == max(40 + 40, 40)
    assert blob_threshold(np.full(256, 1.0), 300) == 254


def test_obe_boxes_match_truth():
    ds = datagen.gen_object_scenes(5, 128, 128, seed=4)
    res = run_task(TaskId.OBE, ds, "modular", CFG)
    for im_id, t in ds.truth.items():
        assert [list(b) for b in res.outputs[im_id]] == t["boxes"]


def test_imreg_identity_on_identical_pairs():
    ds = datagen.gen_identical_pairs(2, 96, 96, seed=2)
    res = run_task(TaskId.IMREG, ds, "minimal", CFG)
    for matrix, flag in res.outputs.values():
        assert flag == "ok"
        assert np.allclose(matrix, np.eye(3), atol=1e-6)


def test_imatch_template_matches_itself_best():
    ds = datagen.gen_match_set(5, 96, 96, seed=2, template_index=3)
    res = run_task(TaskId.IMATCH, ds, "minimal", CFG)
    assert res.extras["best"][0] == ds.params["template"]


def test_cluster_recovers_groups():
    ds = datagen.gen_cluster_images(12, 3, palette_separation=0.5, seed=5, w=32, h=32)
    res = run_task(TaskId.CLUSTER, ds, "modular", CFG)
    truth = {k: t["label"] for k, t in ds.truth.items()}
    assert permutation_agreement(res.outputs, truth) == 1.0


def test_mosaic_needs_two_images_and_orders_tiles():
    ds = datagen.gen_mosaic_tiles(4, seed=2)
    res = run_task(TaskId.MOSAIC, ds, "split", CFG, split_size=1)
    assert res.extras["order"][0] == ds.ids[0]
    assert sorted(res.extras["order"] + res.extras["unmerged"]) == ds.ids
    with pytest.raises(BadParam):
        run_task(TaskId.MOSAIC, datagen.gen_mosaic_tiles(1), "minimal", CFG)
    with pytest.raises(BadParam):
        run_task(TaskId.OBE, ds, "split", CFG)


def test_drop_raw_flows_less_and_same_counts():
    ds = datagen.gen_flower_field(4, 96, 96, blobs_per_img=3, seed=6)
    a = run_task(TaskId.FCOUNT, ds, "modular", CFG)
    b = run_task(TaskId.FCOUNT, ds, "modular", CFG, retention=Retention.DROP_RAW)
    assert a.outputs == b.outputs
    assert b.stats.flowed_bytes < a.stats.flowed_bytes


def test_unknown_param_rejected():
    ds = SMALL[TaskId.FCOUNT]()
    with pytest.raises(BadParam):
        run_task(TaskId.FCOUNT, ds, "minimal", CFG, params={"s1": {"sigmaa": 2}})
