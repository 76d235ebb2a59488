from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdpflow.errors import BadChannels, BadParam, EmptyInput, ImageFormatError, InsufficientMatches, TooSmall
from mdpflow.imgops import (
    FeatureSet,
    Homography,
    Image,
    compute_histogram,
    connected_components,
    correlate_histograms,
    decode_ppm,
    detect_corners,
    dlt_homography,
    encode_ppm,
    estimate_homography_ransac,
    extract_features,
    gaussian_blur,
    kmeans_fit,
    match_descriptors,
    mean_histograms,
    otsu_from_counts,
    to_gray,
    warp_merge,
)
from mdpflow.imgops.features import BORDER, HARRIS_K, NMS_RADIUS, REL_THRESHOLD, harris_response
from mdpflow.imgops.filters import blur_float, gaussian_kernel


def _clamp(i, n):
    return min(max(i, 0), n - 1)


def direct_blur(a, sigma):
    """2-D convolution with the outer-product kernel and clamped edges, one pixel at a time."""
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    h, w = a.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            s = 0.0
            for i in range(-r, r + 1):
                for j in range(-r, r + 1):
                    s += k[i + r] * k[j + r] * a[_clamp(y + i, h), _clamp(x + j, w)]
            out[y, x] = s
    return out


def brute_harris(a):
    h, w = a.shape
    f = a.astype(np.float64) / 255.0
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    sob = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    for y in range(h):
        for x in range(w):
            for i in range(-1, 2):
                for j in range(-1, 2):
                    v = f[_clamp(y + i, h), _clamp(x + j, w)]
                    gx[y, x] += sob[i + 1, j + 1] * v
                    gy[y, x] += sob[j + 1, i + 1] * v
    sxx, syy, sxy = direct_blur(gx * gx, 1.0), direct_blur(gy * gy, 1.0), direct_blur(gx * gy, 1.0)
    return sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2


def brute_corners(resp, max_kp):
    h, w = resp.shape
    peak = resp.max()
    cands = []
    for y in range(BORDER, h - BORDER):
        for x in range(BORDER, w - BORDER):
            win = resp[max(0, y - NMS_RADIUS) : y + NMS_RADIUS + 1, max(0, x - NMS_RADIUS) : x + NMS_RADIUS + 1]
            if resp[y, x] >= win.max() and resp[y, x] > REL_THRESHOLD * peak:
                cands.append((-resp[y, x], y, x))
    kept = []
    for s, y, x in sorted(cands):
        if all(max(abs(x - kx), abs(y - ky)) > NMS_RADIUS for kx, ky, _ in kept):
            kept.append((x, y, -s))
        if len(kept) == max_kp:
            break
    return np.array(kept).reshape(-1, 3)


def flood_fill_labels(mask):
    h, w = mask.shape
    lab = np.zeros((h, w), dtype=np.int32)
    n = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not lab[y, x]:
                n += 1
                lab[y, x] = n
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not lab[ny, nx]:
                            lab[ny, nx] = n
                            q.append((ny, nx))
    return lab, n


def test_blur_matches_direct_2d_convolution():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, (13, 17)).astype(np.float64)
    for sigma in (0.6, 1.0, 2.0):
        assert np.allclose(blur_float(a, sigma), direct_blur(a, sigma), rtol=0, atol=1e-9)


def test_gaussian_blur_rounds_and_validates():
    img = Image(np.full((8, 8), 100, dtype=np.uint8))
    assert gaussian_blur(img, 1.5) == img
    with pytest.raises(BadParam):
        gaussian_blur(img, 0)


def test_harris_matches_brute_force():
    rng = np.random.default_rng(7)
    a = np.zeros((24, 28), dtype=np.uint8)
    a[6:15, 5:14] = 200
    a[14:20, 17:25] = 120
    a = np.clip(a + rng.integers(0, 20, a.shape), 0, 255).astype(np.uint8)
    resp = harris_response(Image(a))
    ref = brute_harris(a)
    assert np.allclose(resp, ref, rtol=1e-9, atol=1e-12)
    got = detect_corners(Image(a), 10)
    want = brute_corners(resp, 10)
    assert np.array_equal(got[:, :2], want[:, :2])


def test_corner_errors():
    with pytest.raises(TooSmall):
        detect_corners(Image(np.zeros((8, 8), dtype=np.uint8)))
    with pytest.raises(BadChannels):
        detect_corners(Image(np.zeros((20, 20, 3), dtype=np.uint8)))
    assert len(detect_corners(Image(np.zeros((20, 20), dtype=np.uint8)))) == 0


def test_connected_components_vs_flood_fill_1000_masks():
    rng = np.random.default_rng(11)
    for i in range(1000):
        h, w = rng.integers(1, 16, 2)
        mask = rng.random((h, w)) < rng.uniform(0.1, 0.8)
        lab = connected_components(mask.astype(np.uint8))
        ref, n = flood_fill_labels(mask)
        assert lab.count == n
        assert np.array_equal(lab.labels, ref), i


def test_otsu_matches_exhaustive_search():
    rng = np.random.default_rng(5)
    for _ in range(200):
        counts = rng.integers(0, 30, 256) * (rng.random(256) < 0.3)
        if (counts > 0).sum() < 2:
            continue
        lv = np.arange(256)
        best, best_t = -1.0, None
        for t in range(255):
            w0, w1 = counts[: t + 1].sum(), counts[t + 1 :].sum()
            if w0 == 0 or w1 == 0:
                continue
            m0 = (counts[: t + 1] * lv[: t + 1]).sum() / w0
            m1 = (counts[t + 1 :] * lv[t + 1 :]).sum() / w1
            v = w0 * w1 * (m0 - m1) ** 2
            if v > best * (1 + 1e-12):
                best, best_t = v, t
        assert otsu_from_counts(counts) == best_t


def test_histogram_mean_and_correlation():
    a = compute_histogram(Image(np.array([[0, 1], [1, 255]], dtype=np.uint8)))
    assert a.bins[1] == 2 and a.total == 4
    m = mean_histograms([a, a])
    assert m == a
    with pytest.raises(EmptyInput):
        mean_histograms([])
    c = correlate_histograms(a, a)
    assert c.value == pytest.approx(1.0) and not c.degenerate
    flat = correlate_histograms(np.ones(256), a)
    assert flat.degenerate and flat.value == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.integers(0, 2**31))
def test_ppm_round_trip(w, h, c, seed):
    px = np.random.default_rng(seed).integers(0, 256, (h, w, c) if c == 3 else (h, w)).astype(np.uint8)
    img = Image(px)
    assert decode_ppm(encode_ppm(img)) == img


def test_ppm_rejects_garbage():
    with pytest.raises(ImageFormatError):
        decode_ppm(b"P7\n1 1\n255\n\x00")


def test_gray_conversion():
    img = Image(np.array([[[255, 0, 0], [0, 0, 255]]], dtype=np.uint8))
    assert to_gray(img).pixels.tolist() == [[76, 29]]


def test_match_descriptors_brute_force():
    rng = np.random.default_rng(2)
    da, db = rng.normal(size=(15, 64)), rng.normal(size=(12, 64))
    db[:5] = da[:5] + rng.normal(scale=0.01, size=(5, 64))
    fa = FeatureSet(np.zeros((15, 3)), da)
    fb = FeatureSet(np.zeros((12, 3)), db)
    matches, ratio = match_descriptors(fa, fb, 0.8)
    want = []
    for i in range(15):
        d = np.sqrt(((db - da[i]) ** 2).sum(1))
        order = np.argsort(d, kind="stable")
        if d[order[0]] < 0.8 * d[order[1]]:
            want.append((i, int(order[0])))
    assert matches == want
    assert ratio == len(want) / 12
    assert match_descriptors(fa, FeatureSet(np.zeros((0, 3)), np.zeros((0, 64))))[1] == 0.0


def test_dlt_exact_and_ransac_rejects_outliers():
    h = np.array([[1.02, 0.03, 5.0], [-0.02, 0.98, -3.0], [1e-4, -2e-4, 1.0]])
    rng = np.random.default_rng(0)
    src = rng.uniform(0, 200, (60, 2))
    dst = Homography(h).apply(src)
    assert np.allclose(dlt_homography(src[:4], dst[:4]), h, atol=1e-8)
    dst_noisy = dst.copy()
    dst_noisy[:15] = rng.uniform(0, 200, (15, 2))
    est, inliers = estimate_homography_ransac(src, dst_noisy, seed=1)
    assert inliers >= 45
    assert np.abs(est.apply(src[15:]) - dst[15:]).max() < 1e-6
    with pytest.raises(InsufficientMatches):
        estimate_homography_ransac(src[:3], dst[:3])


def test_warp_merge_identity_is_base():
    rng = np.random.default_rng(1)
    base = Image(rng.integers(0, 256, (20, 30, 3)).astype(np.uint8))
    assert warp_merge(base, base, Homography.identity()) == base


def test_extract_features_shapes():
    rng = np.random.default_rng(4)
    img = Image(rng.integers(0, 256, (40, 40)).astype(np.uint8))
    fs = extract_features(img, 25)
    assert len(fs) <= 25 and fs.descriptors.shape == (len(fs), 64)


def test_kmeans_objective_non_increasing():
    rng = np.random.default_rng(9)
    pts = np.vstack([rng.normal(c, 0.5, (40, 3)) for c in (0, 4, 8)])
    cents = kmeans_fit(pts, 3, seed=2)
    hist = cents.objective_history
    assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))
    assert cents.k == 3
