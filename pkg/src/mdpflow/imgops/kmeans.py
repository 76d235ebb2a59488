"""Lloyd's k-means with seeded k-means++ initialization (sequential reference)."""

from __future__ import annotations

import numpy as np

from ..errors import BadParam
from .types import Centroids


def sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(n_points, k)``; row results do not depend on n."""
    diff = points[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=-1)


def nearest(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest center (ties -> lowest index) and its squared distance."""
    d = sq_dists(points, centers)
    lab = np.argmin(d, axis=1)
    return lab, d[np.arange(len(points)), lab]


def pick_weighted(d2: np.ndarray, rng: np.random.Generator) -> int:
    """D^2 sampling step of k-means++; falls back to uniform when all weights are zero."""
    total = float(d2.sum())
    if total <= 0.0:
        return int(rng.integers(len(d2)))
    r = rng.random() * total
    idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
    return min(idx, len(d2) - 1)


def kmeanspp_init(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = sq_dists(points, points[chosen]).min(axis=1)
    while len(chosen) < k:
        chosen.append(pick_weighted(d2, rng))
        d2 = np.minimum(d2, sq_dists(points, points[chosen[-1]][None, :])[:, 0])
    return points[chosen].copy()


def kmeans_fit(points, k: int, max_iters: int = 100, tol: float = 1e-6, seed: int = 0) -> Centroids:
    """Lloyd iterations until the largest centroid move drops below ``tol``.

    ``objective_history[i]`` is the sum of squared distances after the
    assignment step of iteration ``i``. An empty cluster is re-seeded at the
    point currently farthest from its centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise BadParam("points must be a non-empty 2-D array")
    if not 1 <= k <= len(pts):
        raise BadParam(f"k must be in [1, {len(pts)}], got {k}")
    if max_iters < 1 or tol < 0:
        raise BadParam("max_iters must be >= 1 and tol >= 0")
    centers = kmeanspp_init(pts, k, seed)
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        lab, dmin = nearest(pts, centers)
        history.append(float(dmin.sum()))
        sums = np.zeros_like(centers)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(len(pts)):
            sums[lab[i]] += pts[i]
            counts[lab[i]] += 1
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        far = dmin.copy()
        for j in np.flatnonzero(~filled):
            idx = int(np.argmax(far))
            new[j] = pts[idx]
            far[idx] = -1.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    return Centroids(centers, iterations=it, objective_history=history)


def kmeans_assign(points, centroids: Centroids) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return nearest(pts, centroids.vectors)[0]
