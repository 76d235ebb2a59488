"""Homography estimation (normalized DLT + RANSAC) and warp-merge compositing."""

from __future__ import annotations

import math

import numpy as np

from ..errors import BadParam, DegenerateConfiguration, InsufficientMatches, SingularHomography
from .types import Homography, Image

DET_EPS = 1e-12
COLLINEAR_EPS = 1e-6


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares homography mapping ``src`` to ``dst`` (n >= 4), Hartley-normalized."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) < 4:
        raise InsufficientMatches(f"need >= 4 correspondences, got {len(src)}")
    t1, t2 = _normalizer(src), _normalizer(dst)
    s = np.hstack([src, np.ones((len(src), 1))]) @ t1.T
    d = np.hstack([dst, np.ones((len(dst), 1))]) @ t2.T
    n = len(s)
    a = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t2) @ hn @ t1
    if abs(h[2, 2]) > 1e-15:
        h = h / h[2, 2]
    return h


def _project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = np.hstack([pts, np.ones((len(pts), 1))]) @ h.T
    w = hom[:, 2:3]
    w = np.where(np.abs(w) < 1e-15, 1e-15, w)
    return hom[:, :2] / w


def symmetric_transfer_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """``|dst - H src|^2 + |src - H^-1 dst|^2`` per correspondence."""
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        return np.full(len(src), np.inf)
    fwd = ((dst - _project(h, src)) ** 2).sum(axis=1)
    bwd = ((src - _project(hinv, dst)) ** 2).sum(axis=1)
    return fwd + bwd


def _collinear(pts: np.ndarray) -> bool:
    for i in range(4):
        a, b, c = (pts[j] for j in range(4) if j != i)
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area < COLLINEAR_EPS:
            return True
    return False


def _needed_samples(inlier_ratio: float, confidence: float) -> float:
    good = inlier_ratio**4
    if good <= 0.0:
        return math.inf
    if good >= 1.0:
        return 1
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - good))


def estimate_homography_ransac(
    src,
    dst,
    iters: int = 500,
    inlier_px: float = 2.0,
    seed: int = 0,
    confidence: float = 0.999,
) -> tuple[Homography, int]:
    """Robust homography from ``src -> dst`` correspondences.

    A pair is an inlier when its symmetric transfer error is below
    ``2 * inlier_px**2`` (each direction averaging under ``inlier_px``).
    Samples with three collinear points are redrawn; the best consensus
    set (most inliers, then lowest error) is re-fitted by DLT. Sampling
    stops early once enough draws were made to hit an all-inlier sample
    with probability ``confidence`` at the current inlier ratio.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientMatches(f"need >= 4 correspondences, got {n}")
    if iters < 1 or inlier_px <= 0 or not 0 < confidence < 1:
        raise BadParam("iters must be >= 1, inlier_px > 0 and confidence in (0, 1)")
    thresh = 2.0 * inlier_px * inlier_px
    rng = np.random.default_rng(seed)
    best_mask = None
    best_key = (-1, math.inf)
    drawn = 0
    needed = iters
    attempts = 0
    max_attempts = iters * 10
    while drawn < iters and attempts < max_attempts:
        attempts += 1
        idx = rng.choice(n, size=4, replace=False)
        if _collinear(src[idx]) or _collinear(dst[idx]):
            continue
        drawn += 1
        h = dlt_homography(src[idx], dst[idx])
        if not np.isfinite(h).all() or abs(np.linalg.det(h)) < DET_EPS:
            continue
        err = symmetric_transfer_error(h, src, dst)
        mask = err < thresh
        key = (int(mask.sum()), float(err[mask].sum()))
        if key[0] > best_key[0] or (key[0] == best_key[0] and key[1] < best_key[1]):
            best_key = key
            best_mask = mask
            if key[0] == n:
                break
            needed = _needed_samples(key[0] / n, confidence)
        if drawn >= needed:
            break
    if best_mask is None:
        raise DegenerateConfiguration("every sample was collinear or singular")
    if best_mask.sum() < 4:
        raise InsufficientMatches(f"only {int(best_mask.sum())} inliers")
    h = dlt_homography(src[best_mask], dst[best_mask])
    err = symmetric_transfer_error(h, src, dst)
    mask = err < thresh
    if mask.sum() >= 4 and not np.array_equal(mask, best_mask):
        h = dlt_homography(src[mask], dst[mask])
        mask = symmetric_transfer_error(h, src, dst) < thresh
    if abs(np.linalg.det(h)) < DET_EPS:
        raise DegenerateConfiguration("re-fitted homography is singular")
    count = int(mask.sum())
    return Homography(h, inliers=count), count


def _bilinear(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = pixels.shape[:2]
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    p = pixels.astype(np.float64)
    if p.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
    bot = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_warp(src: Image, h_dst_to_src: np.ndarray, width: int, height: int, origin=(0.0, 0.0)):
    """Inverse-map every pixel of a ``width x height`` canvas into ``src``.

    Returns ``(values, inside)`` where ``inside`` marks canvas pixels whose
    preimage lies within the source image.
    """
    ys, xs = np.mgrid[0:height, 0:width]
    pts = np.stack([xs.ravel() + origin[0], ys.ravel() + origin[1]], axis=1).astype(np.float64)
    mapped = _project(h_dst_to_src, pts)
    mapped = np.round(mapped, 9)
    mx, my = mapped[:, 0], mapped[:, 1]
    inside = (mx >= 0) & (mx <= src.width - 1) & (my >= 0) & (my <= src.height - 1)
    vals = _bilinear(src.pixels, mx, my)
    return vals, inside


def warp_merge(base: Image, add: Image, h: Homography) -> Image:
    """Composite ``add`` (mapped into base coordinates by ``h``) with ``base``.

    The canvas is the union of both footprints; where they overlap the base
    pixel wins.
    """
    return warp_merge_with_origin(base, add, h)[0]


def warp_merge_with_origin(base: Image, add: Image, h: Homography) -> tuple[Image, tuple[int, int]]:
    """As :func:`warp_merge`, also returning the canvas origin ``(ox, oy)`` in base coordinates."""
    m = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    if not np.isfinite(m).all() or abs(np.linalg.det(m)) < DET_EPS:
        raise SingularHomography("homography is singular")
    if base.channels != add.channels:
        raise BadParam("base and add must have the same channel count")
    corners = np.array([[0, 0], [add.width - 1, 0], [0, add.height - 1], [add.width - 1, add.height - 1]], dtype=np.float64)
    mapped = np.round(_project(m, corners), 6)
    x_min = int(math.floor(min(0.0, mapped[:, 0].min())))
    y_min = int(math.floor(min(0.0, mapped[:, 1].min())))
    x_max = int(math.ceil(max(base.width - 1.0, mapped[:, 0].max())))
    y_max = int(math.ceil(max(base.height - 1.0, mapped[:, 1].max())))
    width, height = x_max - x_min + 1, y_max - y_min + 1
    shape = (height, width) if base.channels == 1 else (height, width, 3)
    canvas = np.zeros(shape, dtype=np.float64)
    # only pixels inside the footprint of ``add`` can receive samples
    fx0 = max(x_min, int(math.floor(mapped[:, 0].min())))
    fy0 = max(y_min, int(math.floor(mapped[:, 1].min())))
    fx1 = min(x_max, int(math.ceil(mapped[:, 0].max())))
    fy1 = min(y_max, int(math.ceil(mapped[:, 1].max())))
    if fx1 >= fx0 and fy1 >= fy0:
        fw, fh = fx1 - fx0 + 1, fy1 - fy0 + 1
        vals, inside = sample_warp(add, np.linalg.inv(m), fw, fh, origin=(fx0, fy0))
        region = canvas[fy0 - y_min : fy1 - y_min + 1, fx0 - x_min : fx1 - x_min + 1]
        flat = region.reshape(fh * fw, -1) if base.channels == 3 else region.reshape(-1)
        flat[inside] = vals[inside]
        canvas[fy0 - y_min : fy1 - y_min + 1, fx0 - x_min : fx1 - x_min + 1] = flat.reshape(region.shape)
    canvas = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    canvas[-y_min : -y_min + base.height, -x_min : -x_min + base.width] = base.pixels
    return Image(canvas), (x_min, y_min)
