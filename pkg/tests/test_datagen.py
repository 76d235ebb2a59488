import numpy as np
import pytest

from mdpflow import datagen
from mdpflow.errors import BadParam
from mdpflow.imgops import encode_ppm


def _bytes(ds):
    out = []
    for _, v in ds.items:
        out += [encode_ppm(im) for im in (v if hasattr(v, "images") else [v])]
    return out


@pytest.mark.parametrize(
    "make",
    [
        lambda s: datagen.gen_flower_field(3, 64, 64, blobs_per_img=2, seed=s),
        lambda s: datagen.gen_match_set(3, 48, 48, seed=s),
        lambda s: datagen.gen_warped_pairs(2, 64, 64, outlier_rate=0.2, noise_sigma=1.0, seed=s),
        lambda s: datagen.gen_cluster_images(4, 2, seed=s, w=16, h=16),
        lambda s: datagen.gen_mosaic_tiles(3, 64, 64, step=24, seed=s, jitter=2),
        lambda s: datagen.gen_object_scenes(3, 96, 96, seed=s),
    ],
)
def test_seed_determinism(make):
    a, b, c = make(5), make(5), make(6)
    assert _bytes(a) == _bytes(b)
    assert a.truth == b.truth
    assert _bytes(a) != _bytes(c)


def test_flower_truth_matches_pixels():
    ds = datagen.gen_flower_field(6, 128, 128, blobs_per_img=(0, 9), seed=2, noise_sigma=0.0)
    for im_id, img in ds.items:
        b = img.pixels[:, :, 2].astype(int)
        t = ds.truth[im_id]
        assert len(t["centers"]) == t["count"]
        for x, y in t["centers"]:
            assert b[y, x] == b[y - 3 : y + 4, x - 3 : x + 4].max()
            assert b[y, x] > datagen.FIELD_BG[2] + 100


def test_flower_zero_blobs_and_bad_params():
    ds = datagen.gen_flower_field(2, 64, 64, blobs_per_img=0, seed=0)
    assert [t["count"] for t in ds.truth.values()] == [0, 0]
    with pytest.raises(BadParam):
        datagen.gen_flower_field(1, 64, 64, blobs_per_img=30)
    with pytest.raises(BadParam):
        datagen.place_centers(np.random.default_rng(0), 40, 200, 200, 6, attempts=1000)


def test_pure_translation_and_identity():
    ds = datagen.gen_warped_pairs(1, 64, 64, translation=(5, 0), seed=1)
    (im_id, pair), = ds.items
    assert ds.truth[im_id]["H"] == [[1.0, 0.0, 5.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    moving, ref = pair[0].pixels, pair[1].pixels
    assert np.array_equal(moving[:, :-5], ref[:, 5:])
    ident = datagen.gen_identical_pairs(2, 48, 48)
    for _, p in ident.items:
        assert p[0] == p[1]
    assert all(np.allclose(t["H"], np.eye(3)) for t in ident.truth.values())


def test_warp_overlap_guard():
    with pytest.raises(BadParam):
        datagen.gen_warped_pairs(1, 64, 64, max_translation=60, max_rotation_deg=0, seed=3)


def test_cluster_labels_balanced():
    ds = datagen.gen_cluster_images(9, 3, palette_separation=0.5, seed=1, w=16, h=16)
    labels = [t["label"] for t in ds.truth.values()]
    assert sorted(labels) == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    assert ds.params["min_group_distance"] >= 0.5
    one = datagen.gen_cluster_images(4, 1, seed=0, w=16, h=16)
    assert {t["label"] for t in one.truth.values()} == {0}
    with pytest.raises(BadParam):
        datagen.gen_cluster_images(2, 3)


def test_mosaic_tiles_overlap_by_offset():
    ds = datagen.gen_mosaic_tiles(3, 64, 32, step=20, seed=0)
    a, b = ds.items[0][1].pixels, ds.items[1][1].pixels
    assert np.array_equal(a[:, 20:], b[:, :44])
    assert [t["offset"] for t in ds.truth.values()] == [[0, 0], [20, 0], [40, 0]]


def test_write_load_round_trip(tmp_path):
    ds = datagen.gen_warped_pairs(2, 48, 48, max_translation=5, seed=4)
    m1 = datagen.write_dataset(ds, tmp_path / "a")
    m2 = datagen.write_dataset(datagen.gen_warped_pairs(2, 48, 48, max_translation=5, seed=4), tmp_path / "b")
    assert datagen.manifest_digest(m1) == datagen.manifest_digest(m2)
    back = datagen.load_dataset(tmp_path / "a")
    assert back.ids == ds.ids and back.truth == ds.truth
    assert all(x[1] == y[1] for x, y in zip(back.items, ds.items))
    empty = datagen.write_dataset(datagen.gen_flower_field(0), tmp_path / "e")
    assert empty.read_text() == "" and len(datagen.load_dataset(tmp_path / "e")) == 0
