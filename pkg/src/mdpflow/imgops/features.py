"""Harris corners, normalized patch descriptors and ratio-test matching."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BadChannels, BadParam, TooSmall
from .filters import blur_float
from .types import FeatureSet, Image

MIN_SIDE = 16
NMS_RADIUS = 4
PATCH = 8
BORDER = 5
HARRIS_K = 0.04
WINDOW_SIGMA = 1.0
REL_THRESHOLD = 0.01


def sobel(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel x/y derivatives with edge clamping."""
    p = np.pad(arr, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy


def harris_response(img: Image) -> np.ndarray:
    a = img.pixels.astype(np.float64) / 255.0
    gx, gy = sobel(a)
    sxx = blur_float(gx * gx, WINDOW_SIGMA)
    syy = blur_float(gy * gy, WINDOW_SIGMA)
    sxy = blur_float(gx * gy, WINDOW_SIGMA)
    return sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2


def detect_corners(img: Image, max_kp: int = 200) -> np.ndarray:
    """Top ``max_kp`` Harris corners as an ``(n, 3)`` array of ``(x, y, score)``.

    Candidates must exceed 1% of the peak response, lie at least 5 px from
    the border and be the maximum of their 9x9 window. Greedy suppression
    in ``(score desc, y, x)`` order then enforces the radius-4 spacing.
    """
    if img.channels != 1:
        raise BadChannels("detect_corners expects a 1-channel image")
    if img.width < MIN_SIDE or img.height < MIN_SIDE:
        raise TooSmall(f"image {img.width}x{img.height} below {MIN_SIDE}x{MIN_SIDE}")
    if max_kp < 0:
        raise BadParam("max_kp must be >= 0")
    resp = harris_response(img)
    peak = resp.max()
    if peak <= 0 or max_kp == 0:
        return np.zeros((0, 3))
    h, w = resp.shape
    win = 2 * NMS_RADIUS + 1
    padded = np.pad(resp, NMS_RADIUS, mode="constant", constant_values=-np.inf)
    rows_max = sliding_window_view(padded, win, axis=1).max(axis=-1)
    local_max = sliding_window_view(rows_max, win, axis=0).max(axis=-1)
    cand = (resp >= local_max) & (resp > REL_THRESHOLD * peak)
    cand[:BORDER, :] = False
    cand[h - BORDER :, :] = False
    cand[:, :BORDER] = False
    cand[:, w - BORDER :] = False
    ys, xs = np.nonzero(cand)
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    kept: list[tuple[int, int, float]] = []
    # a kept corner blocks its (2r+1)^2 square; same test as comparing to every kept corner
    blocked = np.zeros((h, w), dtype=bool)
    r = NMS_RADIUS
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if blocked[y, x]:
            continue
        kept.append((x, y, float(scores[i])))
        if len(kept) >= max_kp:
            break
        blocked[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1] = True
    return np.array(kept, dtype=np.float64).reshape(-1, 3)


def compute_descriptors(img: Image, keypoints: np.ndarray) -> FeatureSet:
    """8x8 patches around each keypoint, normalized to zero mean / unit variance."""
    if img.channels != 1:
        raise BadChannels("compute_descriptors expects a 1-channel image")
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    a = np.pad(img.pixels.astype(np.float64), PATCH, mode="edge")
    half = PATCH // 2
    desc = np.zeros((len(kp), PATCH * PATCH))
    for i, (x, y, _) in enumerate(kp):
        xi, yi = int(x) + PATCH, int(y) + PATCH
        patch = a[yi - half : yi + half, xi - half : xi + half].ravel()
        sd = patch.std()
        desc[i] = (patch - patch.mean()) / sd if sd > 0 else 0.0
    return FeatureSet(kp, desc)


def extract_features(img: Image, max_kp: int = 200) -> FeatureSet:
    return compute_descriptors(img, detect_corners(img, max_kp))


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(d2, 0.0))


def match_descriptors(a: FeatureSet, b: FeatureSet, ratio_thresh: float = 0.8) -> tuple[list[tuple[int, int]], float]:
    """Nearest neighbour in ``b`` for each descriptor of ``a`` under Lowe's ratio test.

    Returns the ``(ia, ib)`` matches and ``|matches| / max(1, min(|a|, |b|))``.
    """
    if not 0 < ratio_thresh <= 1:
        raise BadParam(f"ratio_thresh must be in (0, 1], got {ratio_thresh}")
    if len(a) == 0 or len(b) == 0:
        return [], 0.0
    d = _distances(a.descriptors, b.descriptors)
    best = np.argmin(d, axis=1)
    rows = np.arange(len(a))
    d1 = d[rows, best]
    if len(b) > 1:
        d_masked = d.copy()
        d_masked[rows, best] = np.inf
        d2 = d_masked.min(axis=1)
    else:
        d2 = np.full(len(a), np.inf)
    ok = d1 < ratio_thresh * d2
    matches = [(int(i), int(best[i])) for i in np.flatnonzero(ok)]
    return matches, len(matches) / max(1, min(len(a), len(b)))


def matched_points(a: FeatureSet, b: FeatureSet, matches) -> tuple[np.ndarray, np.ndarray]:
    if not matches:
        return np.zeros((0, 2)), np.zeros((0, 2))
    ia = np.array([m[0] for m in matches])
    ib = np.array([m[1] for m in matches])
    return a.points[ia], b.points[ib]
