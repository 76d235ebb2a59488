"""Layer-3 image operations: pure, deterministic, numpy-only."""

from .features import compute_descriptors, detect_corners, extract_features, match_descriptors, matched_points
from .filters import (
    Correlation,
    color_features,
    compute_histogram,
    connected_components,
    correlate_histograms,
    extract_channel,
    gaussian_blur,
    mean_histograms,
    otsu_from_counts,
    otsu_threshold,
    sum_histograms,
    threshold_mask,
    to_gray,
)
from .geometry import dlt_homography, estimate_homography_ransac, warp_merge, warp_merge_with_origin
from .kmeans import kmeans_assign, kmeans_fit
from .ppm import decode_ppm, encode_ppm, read_ppm, write_ppm
from .types import Centroids, FeatureSet, Histogram, Homography, Image, ImageBundle, LabelMap

__all__ = [
    "Centroids",
    "Correlation",
    "color_features",
    "FeatureSet",
    "Histogram",
    "Homography",
    "Image",
    "ImageBundle",
    "LabelMap",
    "compute_descriptors",
    "compute_histogram",
    "connected_components",
    "correlate_histograms",
    "decode_ppm",
    "detect_corners",
    "dlt_homography",
    "encode_ppm",
    "estimate_homography_ransac",
    "extract_channel",
    "extract_features",
    "gaussian_blur",
    "kmeans_assign",
    "kmeans_fit",
    "match_descriptors",
    "matched_points",
    "mean_histograms",
    "otsu_from_counts",
    "otsu_threshold",
    "read_ppm",
    "sum_histograms",
    "threshold_mask",
    "to_gray",
    "warp_merge",
    "warp_merge_with_origin",
    "write_ppm",
]
