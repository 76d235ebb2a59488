"""Seeded synthetic datasets with ground truth.

Every generator is a pure function of its arguments: image ``i`` draws from
``default_rng([seed, i])`` so any single image can be regenerated alone and
two runs with the same seed produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import BadParam
from .imgops import Homography, Image, ImageBundle, color_features, read_ppm, write_ppm
from .imgops.filters import blur_float
from .imgops.geometry import _bilinear, _project

FIELD_BG = (60, 140, 40)
FLOWER = (235, 225, 190)
FULL_SCALE = (1280, 720)


@dataclass
class Dataset:
    name: str
    items: list  # [(im_id, Image | ImageBundle)]
    truth: dict  # im_id -> dict of ground-truth fields
    width: int
    height: int
    seed: int
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    @property
    def ids(self) -> list[str]:
        return [k for k, _ in self.items]

    def manifest_rows(self) -> list[dict]:
        return [{"im_id": k, **self.truth.get(k, {})} for k, _ in self.items]


def _rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, i])


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def _blob_range(blobs) -> tuple[int, int]:
    if isinstance(blobs, (tuple, list)):
        lo, hi = int(blobs[0]), int(blobs[1])
    else:
        lo = hi = int(blobs)
    if lo < 0 or hi < lo:
        raise BadParam(f"invalid blob count range {blobs!r}")
    return lo, hi


# -- flower fields -------------------------------------------------------------


def place_centers(rng: np.random.Generator, count: int, w: int, h: int, radius: int, attempts: int = 1000) -> list[tuple[int, int]]:
    """Rejection-sample centers at least ``4 * radius`` apart and ``2 * radius`` from the border."""
    margin = 2 * radius
    if count and (w <= 2 * margin or h <= 2 * margin):
        raise BadParam("canvas too small for the blob radius")
    centers: list[tuple[int, int]] = []
    tries = 0
    min_d2 = (4 * radius) ** 2
    while len(centers) < count:
        if tries >= attempts:
            raise BadParam(f"could not place {count} separated blobs in {attempts} attempts")
        tries += 1
        x = int(rng.integers(margin, w - margin))
        y = int(rng.integers(margin, h - margin))
        if all((x - cx) ** 2 + (y - cy) ** 2 >= min_d2 for cx, cy in centers):
            centers.append((x, y))
    return centers


def render_field(w: int, h: int, centers, radius: int, noise: np.ndarray | None) -> Image:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    weight = np.zeros((h, w))
    s2 = 2.0 * (radius / 2.0) ** 2
    for cx, cy in centers:
        weight = np.maximum(weight, np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / s2))
    bg = np.array(FIELD_BG, dtype=np.float64)
    fl = np.array(FLOWER, dtype=np.float64)
    px = bg + weight[:, :, None] * (fl - bg)
    if noise is not None:
        px = px + noise
    return Image(_to_u8(px))


def gen_flower_field(n: int, w: int = 256, h: int = 256, blobs_per_img=7, seed: int = 0, radius: int = 6, noise_sigma: float = 3.0) -> Dataset:
    """Green fields with yellow Gaussian blobs that stand out in the B channel."""
    if n < 0 or w < 1 or h < 1 or radius < 1 or noise_sigma < 0:
        raise BadParam("n >= 0, positive size and radius, noise_sigma >= 0 required")
    lo, hi = _blob_range(blobs_per_img)
    if hi and (4 * radius) ** 2 * hi > max(0, w - 4 * radius) * max(0, h - 4 * radius):
        raise BadParam(f"{hi} blobs of radius {radius} do not fit a {w}x{h} canvas")
    items, truth = [], {}
    for i in range(n):
        rng = _rng(seed, i)
        count = int(rng.integers(lo, hi + 1))
        centers = place_centers(rng, count, w, h, radius)
        noise = rng.normal(0.0, noise_sigma, (h, w, 3)) if noise_sigma > 0 else None
        im_id = f"field-{i:05d}"
        items.append((im_id, render_field(w, h, centers, radius, noise)))
        truth[im_id] = {"count": count, "centers": [list(c) for c in centers]}
    params = {"blobs": [lo, hi], "radius": radius, "noise_sigma": noise_sigma}
    return Dataset("fcount", items, truth, w, h, seed, params)


# -- textured scenes -------------------------------------------------------------


def textured_scene(rng: np.random.Generator, w: int, h: int, rects: int | None = None, texture: float = 20.0) -> np.ndarray:
    """Gray float scene: overlapping flat rectangles (corners) over smooth random texture."""
    rects = rects if rects is not None else max(20, (w * h) // 600)
    side = min(w, h)
    scene = np.full((h, w), float(rng.integers(40, 200)))
    for _ in range(rects):
        rw = int(rng.integers(6, max(8, side // 5)))
        rh = int(rng.integers(6, max(8, side // 5)))
        x = int(rng.integers(-rw // 2, w))
        y = int(rng.integers(-rh // 2, h))
        scene[max(0, y) : max(0, y + rh), max(0, x) : max(0, x + rw)] = float(rng.integers(0, 256))
    # smooth noise keeps normalized patches of similar corners distinguishable
    field = blur_float(rng.normal(0.0, 1.0, (h, w)), 2.0)
    scale = field.std()
    if scale > 0:
        scene = scene + texture * field / scale
    return np.clip(scene, 0.0, 255.0)


def _tint(gray: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    gain = rng.uniform(0.85, 1.0, 3)
    return gray[:, :, None] * gain[None, None, :]


def gen_match_set(n: int, w: int = 256, h: int = 256, seed: int = 0, template_index: int = 0) -> Dataset:
    """Independent textured scenes; ``template_index`` names the template image."""
    if n < 0:
        raise BadParam("n must be >= 0")
    items, truth = [], {}
    for i in range(n):
        rng = _rng(seed, i)
        items.append((f"scene-{i:05d}", Image(_to_u8(_tint(textured_scene(rng, w, h), rng)))))
        truth[items[-1][0]] = {}
    params = {"template": items[template_index][0] if 0 <= template_index < n else None}
    return Dataset("imatch", items, truth, w, h, seed, params)


def sample_homography(rng, max_translation: float, max_rotation_deg: float, max_scale: float = 0.0, max_perspective: float = 0.0) -> np.ndarray:
    """Random similarity about the origin plus optional mild perspective."""
    tx, ty = rng.uniform(-max_translation, max_translation, 2) if max_translation > 0 else (0.0, 0.0)
    th = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg)) if max_rotation_deg > 0 else 0.0
    s = 1.0 + (rng.uniform(-max_scale, max_scale) if max_scale > 0 else 0.0)
    px, py = rng.uniform(-max_perspective, max_perspective, 2) if max_perspective > 0 else (0.0, 0.0)
    c, sn = math.cos(th) * s, math.sin(th) * s
    return np.array([[c, -sn, tx], [sn, c, ty], [px, py, 1.0]])


def _overlap_fraction(hm: np.ndarray, w: int, h: int, grid: int = 24) -> float:
    ys, xs = np.mgrid[0:grid, 0:grid]
    pts = np.stack([xs.ravel() * (w - 1) / (grid - 1), ys.ravel() * (h - 1) / (grid - 1)], axis=1)
    m = _project(hm, pts)
    inside = (m[:, 0] >= 0) & (m[:, 0] <= w - 1) & (m[:, 1] >= 0) & (m[:, 1] <= h - 1)
    return float(inside.mean())


def gen_warped_pairs(
    n: int,
    w: int = 256,
    h: int = 256,
    max_translation: float = 20.0,
    max_rotation_deg: float = 10.0,
    noise_sigma: float = 0.0,
    outlier_rate: float = 0.0,
    seed: int = 0,
    translation: tuple[float, float] | None = None,
) -> Dataset:
    """Registration pairs: ``moving(p) = reference(H p)`` with the exact ``H`` recorded.

    ``outlier_rate`` is the fraction of the moving image overwritten by
    unrelated texture patches (their corners produce false matches).
    ``translation`` fixes a pure translation instead of sampling.
    """
    if n < 0 or not 0.0 <= outlier_rate < 1.0 or noise_sigma < 0:
        raise BadParam("n >= 0, 0 <= outlier_rate < 1 and noise_sigma >= 0 required")
    if max_translation < 0 or max_rotation_deg < 0:
        raise BadParam("ranges must be non-negative")
    items, truth = [], {}
    margin = int(math.ceil(max_translation + math.hypot(w, h) * math.sin(math.radians(min(max_rotation_deg, 90))))) + 4
    for i in range(n):
        rng = _rng(seed, i)
        if translation is not None:
            hm = np.array([[1.0, 0.0, translation[0]], [0.0, 1.0, translation[1]], [0.0, 0.0, 1.0]])
        else:
            hm = sample_homography(rng, max_translation, max_rotation_deg)
        if _overlap_fraction(hm, w, h) < 0.5:
            raise BadParam("sampled warp keeps less than 50% content overlap; shrink the ranges")
        big = textured_scene(rng, w + 2 * margin, h + 2 * margin)
        ref = big[margin : margin + h, margin : margin + w]
        ys, xs = np.mgrid[0:h, 0:w]
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
        src = _project(hm, pts) + margin
        moving = _bilinear(big, src[:, 0], src[:, 1]).reshape(h, w)
        if outlier_rate > 0:
            target = outlier_rate * w * h
            covered = np.zeros((h, w), dtype=bool)
            side = max(8, min(w, h) // 6)
            while covered.sum() < target:
                x = int(rng.integers(0, w - side + 1))
                y = int(rng.integers(0, h - side + 1))
                moving[y : y + side, x : x + side] = textured_scene(rng, side, side, rects=6)
                covered[y : y + side, x : x + side] = True
        if noise_sigma > 0:
            moving = moving + rng.normal(0.0, noise_sigma, moving.shape)
        im_id = f"pair-{i:05d}"
        bundle = ImageBundle((Image(_to_u8(moving)), Image(_to_u8(ref))))
        items.append((im_id, bundle))
        truth[im_id] = {"H": Homography(hm).matrix.tolist()}
    params = {
        "max_translation": max_translation,
        "max_rotation_deg": max_rotation_deg,
        "noise_sigma": noise_sigma,
        "outlier_rate": outlier_rate,
    }
    return Dataset("imreg", items, truth, w, h, seed, params)


def gen_identical_pairs(n: int, w: int = 128, h: int = 128, seed: int = 0) -> Dataset:
    ds = gen_warped_pairs(n, w, h, 0.0, 0.0, seed=seed)
    ds.name = "imreg-identical"
    return ds


# -- clustering ------------------------------------------------------------------


def _palette_image(rng, base: np.ndarray, w: int, h: int) -> Image:
    px = np.broadcast_to(base, (h, w, 3)).astype(np.float64).copy()
    for _ in range(4):
        bw, bh = int(rng.integers(4, w // 2)), int(rng.integers(4, h // 2))
        x, y = int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh))
        px[y : y + bh, x : x + bw] += rng.uniform(-12, 12, 3)
    px += rng.normal(0.0, 3.0, px.shape)
    return Image(_to_u8(px))


def gen_cluster_images(n: int, k: int, palette_separation: float = 0.5, seed: int = 0, w: int = 64, h: int = 64) -> Dataset:
    """``k`` balanced colour groups; group mean features are at least ``palette_separation`` apart."""
    if not 1 <= k <= n:
        raise BadParam(f"need 1 <= k <= n, got k={k}, n={n}")
    if palette_separation < 0:
        raise BadParam("palette_separation must be >= 0")
    prng = np.random.default_rng([seed, 2**32 - 1])
    for _ in range(1000):
        palettes = prng.integers(30, 226, (k, 3)).astype(np.float64)
        labels = [i % k for i in range(n)]
        prng.shuffle(labels)
        items, truth = [], {}
        feats = {j: [] for j in range(k)}
        for i in range(n):
            img = _palette_image(_rng(seed, i), palettes[labels[i]], w, h)
            im_id = f"img-{i:05d}"
            items.append((im_id, img))
            truth[im_id] = {"label": int(labels[i])}
            feats[labels[i]].append(color_features(img))
        means = np.array([np.mean(feats[j], axis=0) for j in range(k)])
        d = [float(np.linalg.norm(means[a] - means[b])) for a in range(k) for b in range(a + 1, k)]
        if not d or min(d) >= palette_separation:
            params = {"k": k, "palette_separation": palette_separation, "min_group_distance": min(d) if d else None}
            return Dataset("cluster", items, truth, w, h, seed, params)
    raise BadParam(f"no palette set reached separation {palette_separation} in 1000 attempts")


# -- mosaic tiles and object scenes ------------------------------------------------


def gen_mosaic_tiles(n: int, tile_w: int = 128, tile_h: int = 128, step: int = 48, seed: int = 0, jitter: int = 0) -> Dataset:
    """Overlapping horizontal crops of one scene; truth records each tile's offset."""
    if n < 0 or step < 1 or step >= tile_w:
        raise BadParam("n >= 0 and 1 <= step < tile_w required")
    rng = np.random.default_rng([seed, 0])
    scene_w = tile_w + step * max(0, n - 1) + 2 * jitter
    scene = textured_scene(rng, scene_w, tile_h + 2 * jitter, rects=max(20, scene_w * tile_h // 500))
    items, truth = [], {}
    for i in range(n):
        jy = int(rng.integers(-jitter, jitter + 1)) if jitter else 0
        x, y = jitter + i * step, jitter + jy
        crop = scene[y : y + tile_h, x : x + tile_w]
        im_id = f"tile-{i:05d}"
        items.append((im_id, Image(_to_u8(np.repeat(crop[:, :, None], 3, axis=2)))))
        truth[im_id] = {"offset": [x, y]}
    return Dataset("mosaic", items, truth, tile_w, tile_h, seed, {"step": step, "jitter": jitter})


def gen_object_scenes(n: int, w: int = 256, h: int = 256, objects=(0, 5), seed: int = 0) -> Dataset:
    """Dark scenes with separated bright rectangles; truth lists inclusive boxes in raster order."""
    lo, hi = _blob_range(objects)
    items, truth = [], {}
    for i in range(n):
        rng = _rng(seed, i)
        count = int(rng.integers(lo, hi + 1))
        px = np.full((h, w, 3), 30.0) + rng.normal(0.0, 2.0, (h, w, 3))
        boxes: list[tuple[int, int, int, int]] = []
        tries = 0
        while len(boxes) < count:
            tries += 1
            if tries > 1000:
                raise BadParam("could not place separated objects")
            bw, bh = int(rng.integers(8, 40)), int(rng.integers(8, 40))
            x0, y0 = int(rng.integers(2, w - bw - 2)), int(rng.integers(2, h - bh - 2))
            box = (x0, y0, x0 + bw - 1, y0 + bh - 1)
            if all(box[0] > b[2] + 3 or b[0] > box[2] + 3 or box[1] > b[3] + 3 or b[1] > box[3] + 3 for b in boxes):
                boxes.append(box)
        for x0, y0, x1, y1 in boxes:
            px[y0 : y1 + 1, x0 : x1 + 1] = rng.uniform(180, 240, 3)
        boxes.sort(key=lambda b: (b[1], b[0]))
        im_id = f"scene-{i:05d}"
        items.append((im_id, Image(_to_u8(px))))
        truth[im_id] = {"boxes": [list(b) for b in boxes]}
    return Dataset("obe", items, truth, w, h, seed, {"objects": [lo, hi]})


GENERATORS = {
    "fcount": gen_flower_field,
    "imatch": gen_match_set,
    "imreg": gen_warped_pairs,
    "cluster": gen_cluster_images,
    "mosaic": gen_mosaic_tiles,
    "obe": gen_object_scenes,
}


# -- on-disk format ------------------------------------------------------------------

BUNDLE_PARTS = ("moving", "reference")


def write_dataset(ds: Dataset, out: str | Path) -> Path:
    """``images/*.ppm`` + ``manifest.jsonl`` (one row per image) + ``dataset.json``."""
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for im_id, value in ds.items:
        if isinstance(value, ImageBundle):
            for part, im in zip(BUNDLE_PARTS, value):
                write_ppm(out / "images" / f"{im_id}.{part}.ppm", im)
        else:
            write_ppm(out / "images" / f"{im_id}.ppm", value)
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for row in ds.manifest_rows():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    meta = {
        "name": ds.name,
        "count": len(ds),
        "width": ds.width,
        "height": ds.height,
        "seed": ds.seed,
        "params": ds.params,
        "bundles": any(isinstance(v, ImageBundle) for _, v in ds.items),
    }
    (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return out / "manifest.jsonl"


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    meta = json.loads((path / "dataset.json").read_text(encoding="utf-8"))
    items, truth = [], {}
    for line in (path / "manifest.jsonl").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        im_id = row.pop("im_id")
        if meta.get("bundles"):
            value: Any = ImageBundle(tuple(read_ppm(path / "images" / f"{im_id}.{p}.ppm") for p in BUNDLE_PARTS))
        else:
            value = read_ppm(path / "images" / f"{im_id}.ppm")
        items.append((im_id, value))
        truth[im_id] = row
    return Dataset(meta["name"], items, truth, meta["width"], meta["height"], meta["seed"], meta.get("params", {}))


def manifest_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
