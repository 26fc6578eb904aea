"""The four-detector edge bank: Sobel, Laplacian-of-Gaussian, Canny and HED.

HED maps come from an external network; this module only ingests them.
All convolutions use replicate border padding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DomainError
from .imagecore import (
    GrayImage,
    correlate,
    gaussian_kernel1d,
    load_grayscale,
    quantize,
    resize_bicubic,
)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

DEFAULT_LOG_SIGMA = 1.4


class DetectorId(str, enum.Enum):
    SOBEL = "sobel"
    LOG = "log"
    CANNY = "canny"
    HED = "hed"

    @classmethod
    def parse(cls, name) -> "DetectorId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown detector {name!r}; expected one of {[d.value for d in cls]}"
            ) from None


ALL_DETECTORS = (DetectorId.SOBEL, DetectorId.LOG, DetectorId.CANNY, DetectorId.HED)
LINEAR_DETECTORS = (DetectorId.SOBEL, DetectorId.LOG)


@dataclass(frozen=True)
class CannyParams:
    gaussian_kernel: int = 7
    clahe_clip_limit: float = 2.0
    clahe_tiles: int = 8
    low_factor: float = 0.66
    high_factor: float = 1.33
    closing_kernel: int = 5

    def __post_init__(self):
        for name in ("gaussian_kernel", "closing_kernel"):
            k = getattr(self, name)
            if int(k) != k or k < 3 or k % 2 == 0:
                raise ConfigurationError(f"{name} must be an odd integer >= 3, got {k}")
        if self.clahe_clip_limit <= 0:
            raise ConfigurationError("clahe_clip_limit must be positive")
        if int(self.clahe_tiles) != self.clahe_tiles or self.clahe_tiles < 1:
            raise ConfigurationError("clahe_tiles must be a positive integer")
        if not 0 < self.low_factor <= self.high_factor:
            raise ConfigurationError(
                f"need 0 < low_factor <= high_factor, got {self.low_factor}, {self.high_factor}"
            )

    @property
    def gaussian_sigma(self) -> float:
        return kernel_sigma(self.gaussian_kernel)


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray = field(repr=False)
    gy: np.ndarray = field(repr=False)
    magnitude: GrayImage


HedSource = Union[GrayImage, str, Path, None]


@dataclass(frozen=True)
class EdgeConfig:
    """Per-detector settings; ``hed_map`` is an image or a path to one."""

    canny: CannyParams = field(default_factory=CannyParams)
    log_sigma: float = DEFAULT_LOG_SIGMA
    hed_map: HedSource = None

    def __post_init__(self):
        if not self.log_sigma > 0:
            raise ConfigurationError(f"log_sigma must be positive, got {self.log_sigma}")

    def with_hed(self, hed_map: HedSource) -> "EdgeConfig":
        return replace(self, hed_map=hed_map)


def kernel_sigma(ksize: int) -> float:
    """Gaussian sigma implied by an odd kernel size."""
    return 0.3 * ((ksize - 1) / 2.0 - 1.0) + 0.8


def _normalize_by_max(arr: np.ndarray) -> GrayImage:
    peak = arr.max()
    if peak <= 0:
        return GrayImage(np.zeros_like(arr))
    return GrayImage.clipped(arr / peak)


# -- Sobel -----------------------------------------------------------------


def _diff_smooth(arr: np.ndarray, axis: int) -> np.ndarray:
    # central difference along ``axis``, then [1, 2, 1] across it
    n = arr.shape[axis]
    idx = np.arange(n)
    fwd = np.take(arr, np.minimum(idx + 1, n - 1), axis=axis)
    back = np.take(arr, np.maximum(idx - 1, 0), axis=axis)
    d = fwd - back
    other = 1 - axis
    m = arr.shape[other]
    idx = np.arange(m)
    up = np.take(d, np.maximum(idx - 1, 0), axis=other)
    down = np.take(d, np.minimum(idx + 1, m - 1), axis=other)
    return (up + down) + 2.0 * d


def sobel_xy(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed 3x3 Sobel responses (x to the right, y downward), replicate borders."""
    arr = np.asarray(arr, dtype=np.float64)
    return _diff_smooth(arr, 1), _diff_smooth(arr, 0)


def sobel(img: GrayImage) -> GradientField:
    gx, gy = sobel_xy(np.asarray(img))
    return GradientField(gx, gy, _normalize_by_max(np.hypot(gx, gy)))


# -- Laplacian of Gaussian -------------------------------------------------


def log_kernel(sigma: float) -> np.ndarray:
    """Zero-sum LoG kernel of size ``2*ceil(3*sigma)+1``."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    half = int(math.ceil(3.0 * sigma))
    x = np.arange(-half, half + 1, dtype=np.float64)
    r2 = x[None, :] ** 2 + x[:, None] ** 2
    s2 = sigma * sigma
    k = -(1.0 / (math.pi * s2 * s2)) * (1.0 - r2 / (2.0 * s2)) * np.exp(-r2 / (2.0 * s2))
    return k - k.mean()


def log_response(img: GrayImage, sigma: float = DEFAULT_LOG_SIGMA) -> tuple[np.ndarray, GrayImage]:
    """Signed LoG response and its max-normalized absolute value."""
    response = correlate(np.asarray(img), log_kernel(sigma))
    return response, _normalize_by_max(np.abs(response))


# -- Canny -----------------------------------------------------------------


def gaussian_blur(arr: np.ndarray, ksize: int) -> np.ndarray:
    g = gaussian_kernel1d(ksize, kernel_sigma(ksize))
    out = ndimage.correlate1d(np.asarray(arr, dtype=np.float64), g, axis=0, mode="nearest")
    return ndimage.correlate1d(out, g, axis=1, mode="nearest")


def clahe(img8: np.ndarray, clip_limit: float = 2.0, tiles: int = 8) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of an 8-bit image.

    The image is split into ``tiles`` x ``tiles`` cells (bottom/right edges
    are mirror-padded when the size is not divisible).  Each cell histogram
    is clipped at ``max(int(clip_limit * area / 256), 1)``, the excess is
    spread evenly with the remainder going to every ``256 // rest``-th bin,
    and the per-cell equalization curves are blended bilinearly between
    cell centres.
    """
    img8 = np.asarray(img8)
    if img8.dtype != np.uint8:
        raise DomainError("clahe expects an 8-bit image")
    h, w = img8.shape
    pad_h = (-h) % tiles
    pad_w = (-w) % tiles
    padded = img8
    if pad_h or pad_w:
        padded = np.pad(img8, ((0, pad_h), (0, pad_w)), mode="reflect" if min(h, w) > 1 else "edge")
    th = padded.shape[0] // tiles
    tw = padded.shape[1] // tiles
    area = th * tw
    limit = max(int(clip_limit * area / 256), 1)

    luts = np.empty((tiles, tiles, 256), dtype=np.float64)
    for ty in range(tiles):
        for tx in range(tiles):
            cell = padded[ty * th:(ty + 1) * th, tx * tw:(tx + 1) * tw]
            hist = np.bincount(cell.ravel(), minlength=256).astype(np.int64)
            excess = int(np.maximum(hist - limit, 0).sum())
            hist = np.minimum(hist, limit)
            hist += excess // 256
            rest = excess % 256
            if rest:
                step = max(256 // rest, 1)
                bins = np.arange(0, 256, step)[:rest]
                hist[bins] += 1
            luts[ty, tx] = np.clip(np.rint(np.cumsum(hist) * (255.0 / area)), 0, 255)

    ys = np.arange(h) / th - 0.5
    xs = np.arange(w) / tw - 0.5
    y1 = np.floor(ys).astype(int)
    x1 = np.floor(xs).astype(int)
    ya = (ys - y1)[:, None]
    xa = (xs - x1)[None, :]
    y2 = np.clip(y1 + 1, 0, tiles - 1)[:, None]
    x2 = np.clip(x1 + 1, 0, tiles - 1)[None, :]
    y1 = np.clip(y1, 0, tiles - 1)[:, None]
    x1 = np.clip(x1, 0, tiles - 1)[None, :]
    v = img8.astype(np.intp)
    top = luts[y1, x1, v] * (1.0 - xa) + luts[y1, x2, v] * xa
    bottom = luts[y2, x1, v] * (1.0 - xa) + luts[y2, x2, v] * xa
    out = top * (1.0 - ya) + bottom * ya
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def median_thresholds(img8: np.ndarray, params: CannyParams) -> tuple[float, float]:
    med = float(np.median(img8))
    return params.low_factor * med, params.high_factor * med


# neighbour offsets (dy, dx) along the quantized gradient direction
_NMS_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))


def non_max_suppression(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Thin gradient magnitude to ridges along four quantized directions.

    A pixel survives if it is strictly greater than its neighbour behind it
    and not smaller than the one ahead, so flat two-pixel ridges keep one pixel.
    """
    mag = np.hypot(gx, gy)
    h, w = mag.shape
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.select(
        [(angle < 22.5) | (angle >= 157.5), angle < 67.5, angle < 112.5],
        [0, 1, 2],
        default=3,
    )
    yy, xx = np.mgrid[0:h, 0:w]
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dy, dx) in enumerate(_NMS_OFFSETS):
        ahead = mag[np.clip(yy + dy, 0, h - 1), np.clip(xx + dx, 0, w - 1)]
        behind = mag[np.clip(yy - dy, 0, h - 1), np.clip(xx - dx, 0, w - 1)]
        keep |= (sector == s) & (mag > behind) & (mag >= ahead)
    return np.where(keep & (mag > 0), mag, 0.0)


def hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep 8-connected runs of ``nms > low`` that contain a pixel ``> high``."""
    candidate = nms > low
    strong = nms > high
    labels, n = ndimage.label(candidate, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(nms.shape, dtype=bool)
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return seeded[labels]


def ellipse_kernel(size: int) -> np.ndarray:
    """Elliptical structuring element inscribed in a ``size`` x ``size`` box."""
    r = size // 2
    se = np.zeros((size, size), dtype=bool)
    for i in range(size):
        dy = i - r
        dx = int(round(r * math.sqrt((r * r - dy * dy) / (r * r)))) if r else 0
        se[i, max(r - dx, 0):min(r + dx + 1, size)] = True
    return se


def _morph(mask: np.ndarray, se: np.ndarray, reduce) -> np.ndarray:
    ry, rx = se.shape[0] // 2, se.shape[1] // 2
    padded = np.pad(mask, ((ry, ry), (rx, rx)), mode="edge")
    h, w = mask.shape
    out = None
    for dy, dx in zip(*np.nonzero(se)):
        window = padded[dy:dy + h, dx:dx + w]
        out = window.copy() if out is None else reduce(out, window)
    return out


def binary_closing(mask: np.ndarray, se: np.ndarray) -> np.ndarray:
    dilated = _morph(mask, se, np.logical_or)
    return _morph(dilated, se, np.logical_and)


def canny(img: GrayImage, params: CannyParams | None = None) -> GrayImage:
    """Binary Canny edge map with CLAHE preprocessing and median thresholds."""
    params = params or CannyParams()
    blurred = gaussian_blur(np.asarray(img), params.gaussian_kernel)
    eq = clahe(quantize(GrayImage.clipped(blurred)), params.clahe_clip_limit, params.clahe_tiles)
    low, high = median_thresholds(eq, params)
    eq = eq.astype(np.float64)
    nms = non_max_suppression(*sobel_xy(eq))
    edges = hysteresis(nms, low, high)
    closed = binary_closing(edges, ellipse_kernel(params.closing_kernel))
    return GrayImage(closed.astype(np.float64))


# -- HED ingestion ---------------------------------------------------------


def ingest_hed(path, target_w: int, target_h: int) -> GrayImage:
    """Load a precomputed HED soft-edge map and bring it to the target size."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"HED map not found: {path}")
    return resize_bicubic(load_grayscale(path), target_w, target_h)


def _resolve_hed(source: HedSource, img: GrayImage) -> GrayImage:
    if source is None:
        raise ConfigurationError("HED detector requested but no HED map was provided")
    if isinstance(source, GrayImage):
        return resize_bicubic(source, img.width, img.height)
    return ingest_hed(source, img.width, img.height)


def detect(detector, img: GrayImage, config: EdgeConfig | None = None) -> GrayImage:
    """Edge map of ``img`` in [0, 1] for one detector of the bank."""
    detector = DetectorId.parse(detector)
    config = config or EdgeConfig()
    if detector is DetectorId.SOBEL:
        return sobel(img).magnitude
    if detector is DetectorId.LOG:
        return log_response(img, config.log_sigma)[1]
    if detector is DetectorId.CANNY:
        return canny(img, config.canny)
    return _resolve_hed(config.hed_map, img)
