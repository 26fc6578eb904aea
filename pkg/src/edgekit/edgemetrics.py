"""Per-detector loss components and full-reference image metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .detectors import SOBEL_X, SOBEL_Y, DEFAULT_LOG_SIGMA, DetectorId, log_kernel, sobel_xy
from .errors import ConfigurationError, ShapeError, UnsupportedDetectorError
from .imagecore import GrayImage, correlate, correlate_adjoint, gaussian_kernel1d, require_same_shape

PSNR_INF = math.inf


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError(f"SSIM window must be an odd integer >= 3, got {self.window}")
        if self.window_sigma <= 0:
            raise ConfigurationError("SSIM window_sigma must be positive")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigurationError("SSIM k1 and k2 must be positive")
        if self.dynamic_range <= 0:
            raise ConfigurationError("SSIM dynamic_range must be positive")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    require_same_shape(a, b, "images")
    return np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)


def l1_loss(a: GrayImage, b: GrayImage) -> float:
    """Per-pixel mean absolute difference."""
    x, y = _pair(a, b)
    return float(np.mean(np.abs(x - y)))


def l2_loss(a: GrayImage, b: GrayImage) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a: GrayImage, b: GrayImage, dynamic_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    mse = l2_loss(a, b)
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(dynamic_range * dynamic_range / mse)


def _filter_valid(arr: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, 'valid' region only
    rows = sliding_window_view(arr, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_map(a: GrayImage, b: GrayImage, p: SsimParams | None = None) -> np.ndarray:
    p = p or SsimParams()
    x, y = _pair(a, b)
    if min(x.shape) < p.window:
        raise ShapeError(f"images of shape {x.shape} are smaller than the {p.window}px SSIM window")
    g = gaussian_kernel1d(p.window, p.window_sigma)
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * (mu_x * mu_y) + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: GrayImage, b: GrayImage, p: SsimParams | None = None) -> float:
    """Mean SSIM over all full Gaussian windows (no border padding)."""
    return float(np.mean(ssim_map(a, b, p)))


def ssim_loss(a: GrayImage, b: GrayImage, p: SsimParams | None = None) -> float:
    # clamp rounding noise so the loss stays inside [0, 2]
    return min(max(1.0 - ssim(a, b, p), 0.0), 2.0)


def linear_responses(detector, arr: np.ndarray, log_sigma: float = DEFAULT_LOG_SIGMA) -> tuple[np.ndarray, ...]:
    """Signed responses a linear edge loss compares: (gx, gy) for Sobel, one map for LoG."""
    detector = DetectorId.parse(detector)
    _linear_kernels(detector, log_sigma)
    if detector is DetectorId.SOBEL:
        return sobel_xy(arr)
    return (correlate(arr, log_kernel(log_sigma)),)


def _linear_kernels(detector: DetectorId, log_sigma: float) -> tuple[np.ndarray, ...]:
    if detector is DetectorId.SOBEL:
        return SOBEL_X, SOBEL_Y
    if detector is DetectorId.LOG:
        return (log_kernel(log_sigma),)
    raise UnsupportedDetectorError(
        f"{detector.value} is not differentiable; gradients exist only for sobel and log"
    )


def edge_loss(detector, x_hat: GrayImage, x_gt: GrayImage, log_sigma: float = DEFAULT_LOG_SIGMA) -> float:
    """Differentiable L1 edge term on unnormalized linear responses.

    Sobel contributes two terms (horizontal and vertical responses).
    """
    detector = DetectorId.parse(detector)
    _linear_kernels(detector, log_sigma)
    xh, xg = _pair(x_hat, x_gt)
    pairs = zip(linear_responses(detector, xh, log_sigma), linear_responses(detector, xg, log_sigma))
    return float(sum(np.mean(np.abs(rh - rg)) for rh, rg in pairs))


def edge_loss_gradient(
    detector, x_hat: GrayImage, x_gt: GrayImage, log_sigma: float = DEFAULT_LOG_SIGMA
) -> np.ndarray:
    """Subgradient of :func:`edge_loss` with respect to ``x_hat``.

    Uses ``sign(0) = 0`` at kinks.
    """
    detector = DetectorId.parse(detector)
    kernels = _linear_kernels(detector, log_sigma)
    xh, xg = _pair(x_hat, x_gt)
    grad = np.zeros_like(xh)
    pairs = zip(kernels, linear_responses(detector, xh, log_sigma), linear_responses(detector, xg, log_sigma))
    for k, rh, rg in pairs:
        grad += correlate_adjoint(np.sign(rh - rg), k)
    return grad / xh.size
