"""Value types for the image-operation layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BadChannels, BadParam

HEADER_BYTES = 16
HIST_BINS = 256


class Image:
    """8-bit image, 1 or 3 channels, stored as a read-only numpy array.

    ``pixels`` has shape ``(height, width)`` for one channel and
    ``(height, width, 3)`` for three.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.dtype != np.uint8:
            raise BadParam(f"image data must be uint8, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise BadChannels(f"unsupported image shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise BadParam("image must be at least 1x1")
        arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self.pixels = arr

    @classmethod
    def blank(cls, width: int, height: int, channels: int = 1, value: int = 0) -> "Image":
        shape = (height, width) if channels == 1 else (height, width, channels)
        return cls(np.full(shape, value, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def size_bytes(self) -> int:
        return self.width * self.height * self.channels + HEADER_BYTES

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self) -> str:
        return f"Image({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True, eq=False)
class ImageBundle:
    """An ordered group of images travelling as one slot value (e.g. a registration pair)."""

    images: tuple

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))

    def __getitem__(self, i):
        return self.images[i]

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def size_bytes(self) -> int:
        from ..sizing import size_of

        return sum(size_of(im) for im in self.images) + 8 * len(self.images)

    def __eq__(self, other):
        return isinstance(other, ImageBundle) and self.images == other.images


@dataclass(eq=False)
class Histogram:
    bins: np.ndarray
    channel: str = "gray"

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.float64)
        if b.shape != (HIST_BINS,):
            raise BadParam(f"histogram must have {HIST_BINS} bins, got shape {b.shape}")
        if (b < 0).any():
            raise BadParam("histogram bins must be non-negative")
        b = b.copy()
        b.flags.writeable = False
        self.bins = b

    def size_bytes(self) -> int:
        return HIST_BINS * 8 + HEADER_BYTES

    @property
    def total(self) -> float:
        return float(self.bins.sum())

    def __eq__(self, other):
        return isinstance(other, Histogram) and self.channel == other.channel and bool(
            np.array_equal(self.bins, other.bins)
        )

    def __repr__(self):
        return f"Histogram(channel={self.channel!r}, total={self.total:g})"


@dataclass(eq=False)
class FeatureSet:
    """Keypoints ``(x, y, score)`` aligned row-for-row with descriptors."""

    keypoints: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        desc = np.asarray(self.descriptors, dtype=np.float64)
        if desc.size == 0:
            desc = desc.reshape(len(kp), -1) if len(kp) else np.zeros((0, 64))
        if len(kp) != len(desc):
            raise BadParam("keypoints and descriptors must align")
        self.keypoints = kp
        self.descriptors = desc

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def points(self) -> np.ndarray:
        return self.keypoints[:, :2]

    def size_bytes(self) -> int:
        return int(self.keypoints.nbytes + self.descriptors.nbytes) + HEADER_BYTES

    def __eq__(self, other):
        return (
            isinstance(other, FeatureSet)
            and np.array_equal(self.keypoints, other.keypoints)
            and np.array_equal(self.descriptors, other.descriptors)
        )


@dataclass(eq=False)
class Homography:
    matrix: np.ndarray
    inliers: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3).copy()
        if m[2, 2] != 0:
            m = m / m[2, 2]
        self.matrix = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]]))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        hom = np.hstack([pts, np.ones((len(pts), 1))]) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def size_bytes(self) -> int:
        return 9 * 8 + HEADER_BYTES

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self):
        return f"Homography({np.array2string(self.matrix, precision=4)})"


@dataclass(eq=False)
class LabelMap:
    labels: np.ndarray
    count: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def size_bytes(self) -> int:
        return int(self.labels.nbytes) + HEADER_BYTES

    def boxes(self) -> list[tuple[int, int, int, int]]:
        """Bounding boxes ``(x0, y0, x1, y1)`` (inclusive) for labels 1..count."""
        out = []
        for lab in range(1, self.count + 1):
            ys, xs = np.nonzero(self.labels == lab)
            out.append((int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
        return out

    def areas(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)[1:]

    def __eq__(self, other):
        return isinstance(other, LabelMap) and self.count == other.count and np.array_equal(
            self.labels, other.labels
        )


@dataclass(eq=False)
class Centroids:
    vectors: np.ndarray
    iterations: int = 0
    objective_history: list = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or len(v) < 1:
            raise BadParam("centroids need k >= 1 vectors")
        if not np.isfinite(v).all():
            raise BadParam("centroids must be finite")
        self.vectors = v

    @property
    def k(self) -> int:
        return len(self.vectors)

    def assign(self, points) -> np.ndarray:
        from .kmeans import kmeans_assign

        return kmeans_assign(points, self)

    def size_bytes(self) -> int:
        return int(self.vectors.nbytes) + HEADER_BYTES
