"""Pixel-level operations: color conversion, blur, histograms, Otsu, labeling."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import BadChannels, BadParam, EmptyInput
from .types import HIST_BINS, Histogram, Image, LabelMap

LUMA = (0.299, 0.587, 0.114)


def _round_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def to_gray(img: Image) -> Image:
    if img.channels != 3:
        raise BadChannels(f"to_gray expects 3 channels, got {img.channels}")
    p = img.pixels.astype(np.float64)
    luma = LUMA[0] * p[:, :, 0] + LUMA[1] * p[:, :, 1] + LUMA[2] * p[:, :, 2]
    return Image(_round_u8(luma))


def extract_channel(img: Image, c: int) -> Image:
    if not 0 <= c < img.channels:
        raise BadChannels(f"channel {c} out of range for {img.channels}-channel image")
    if img.channels == 1:
        return img
    return Image(img.pixels[:, :, c])


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise BadParam(f"sigma must be > 0, got {sigma}")
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def convolve_rows(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """1-D convolution along axis 1 with edge clamping."""
    r = len(kernel) // 2
    pad = np.pad(arr, [(0, 0), (r, r)] + [(0, 0)] * (arr.ndim - 2), mode="edge")
    out = np.zeros(arr.shape, dtype=np.float64)
    w = arr.shape[1]
    for i, kv in enumerate(kernel):
        out += kv * pad[:, i : i + w]
    return out


def convolve_cols(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """1-D convolution along axis 0 with edge clamping."""
    r = len(kernel) // 2
    pad = np.pad(arr, [(r, r)] + [(0, 0)] * (arr.ndim - 1), mode="edge")
    out = np.zeros(arr.shape, dtype=np.float64)
    h = arr.shape[0]
    for i, kv in enumerate(kernel):
        out += kv * pad[i : i + h]
    return out


def blur_float(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a float array (2-D or HxWxC), clamped edges."""
    k = gaussian_kernel(sigma)
    return convolve_cols(convolve_rows(np.asarray(arr, dtype=np.float64), k), k)


def gaussian_blur(img: Image, sigma: float) -> Image:
    return Image(_round_u8(blur_float(img.pixels, sigma)))


def compute_histogram(img: Image, channel: str | None = None) -> Histogram:
    if img.channels != 1:
        raise BadChannels("histogram expects a 1-channel image")
    counts = np.bincount(img.pixels.ravel(), minlength=HIST_BINS).astype(np.float64)
    return Histogram(counts, channel or "gray")


def mean_histograms(hists: Sequence[Histogram]) -> Histogram:
    if len(hists) == 0:
        raise EmptyInput("mean of zero histograms")
    total = np.zeros(HIST_BINS, dtype=np.float64)
    for h in hists:
        total += h.bins
    return Histogram(total / len(hists), hists[0].channel)


def sum_histograms(hists: Sequence[Histogram]) -> np.ndarray:
    total = np.zeros(HIST_BINS, dtype=np.float64)
    for h in hists:
        total += h.bins
    return total


class Correlation(NamedTuple):
    value: float
    degenerate: bool


def correlate_histograms(a, b) -> Correlation:
    """Pearson correlation of two bin vectors; a constant input yields ``(0.0, True)``."""
    x = np.asarray(getattr(a, "bins", a), dtype=np.float64)
    y = np.asarray(getattr(b, "bins", b), dtype=np.float64)
    if x.shape != (HIST_BINS,) or y.shape != (HIST_BINS,):
        raise BadParam("correlation needs two 256-bin vectors")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        return Correlation(0.0, True)
    r = float((dx * dy).sum() / (sx * sy))
    return Correlation(min(1.0, max(-1.0, r)), False)


def otsu_from_counts(counts: np.ndarray) -> int:
    """Threshold ``t`` maximizing between-class variance of ``{<= t}`` vs ``{> t}``.

    Ties go to the lowest ``t``. When no split separates two non-empty
    classes (a single occupied bin) that bin's value is returned.
    """
    c = np.asarray(counts, dtype=np.float64)
    levels = np.arange(len(c), dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return 0
    w0 = np.cumsum(c)[:-1]
    m0 = np.cumsum(c * levels)[:-1]
    w1 = total - w0
    mtot = (c * levels).sum()
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return int(np.nonzero(c)[0].max())
    mu0 = np.where(valid, m0 / np.where(w0 > 0, w0, 1), 0.0)
    mu1 = np.where(valid, (mtot - m0) / np.where(w1 > 0, w1, 1), 0.0)
    var_b = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(var_b))


def otsu_threshold(img: Image) -> tuple[int, Image]:
    if img.channels != 1:
        raise BadChannels("otsu expects a 1-channel image")
    counts = np.bincount(img.pixels.ravel(), minlength=HIST_BINS)
    t = otsu_from_counts(counts)
    return t, threshold_mask(img, t)


def threshold_mask(img: Image, t: int) -> Image:
    return Image(np.where(img.pixels > t, 255, 0).astype(np.uint8))


def connected_components(mask) -> LabelMap:
    """4-connected labeling; labels are numbered in raster order of first pixel.

    Works on horizontal runs: runs in adjacent rows that share a column are
    unioned, so the Python-level work scales with the number of runs rather
    than pixels.
    """
    m = np.asarray(getattr(mask, "pixels", mask)) != 0
    if m.ndim != 2:
        raise BadChannels("mask must be 2-D")
    h, w = m.shape
    runs: list[tuple[int, int, int]] = []  # (row, start, end_exclusive)
    row_runs: list[list[int]] = []
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = m
    edges = np.diff(padded, axis=1)
    for y in range(h):
        starts = np.flatnonzero(edges[y] == 1)
        ends = np.flatnonzero(edges[y] == -1)
        ids = []
        for s, e in zip(starts.tolist(), ends.tolist()):
            ids.append(len(runs))
            runs.append((y, s, e))
        row_runs.append(ids)

    parent = list(range(len(runs)))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for y in range(1, h):
        prev, cur = row_runs[y - 1], row_runs[y]
        i = j = 0
        while i < len(prev) and j < len(cur):
            _, ps, pe = runs[prev[i]]
            _, cs, ce = runs[cur[j]]
            if ps < ce and cs < pe:
                ra, rb = find(prev[i]), find(cur[j])
                if ra != rb:
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
            if pe < ce:
                i += 1
            else:
                j += 1

    labels = np.zeros((h, w), dtype=np.int32)
    label_of: dict[int, int] = {}
    for idx, (y, s, e) in enumerate(runs):
        root = find(idx)
        lab = label_of.get(root)
        if lab is None:
            lab = len(label_of) + 1
            label_of[root] = lab
        labels[y, s:e] = lab
    return LabelMap(labels, len(label_of))


def color_features(img: Image, bins: int = 32) -> np.ndarray:
    """Concatenated per-channel normalized histograms (``3 * bins`` values)."""
    if img.channels != 3:
        raise BadChannels("color features expect a 3-channel image")
    if bins < 1 or 256 % bins:
        raise BadParam("bins must divide 256")
    shift = int(math.log2(256 // bins))
    n = img.width * img.height
    parts = [np.bincount((img.pixels[:, :, c] >> shift).ravel(), minlength=bins) / n for c in range(3)]
    return np.concatenate(parts).astype(np.float64)
