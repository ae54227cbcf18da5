"""PSNR, SSIM, IoU and MSE on (rows x channels) arrays.

Images are passed flattened in row-major pixel order together with their
(height, width).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DomainError, ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float | None = None
    ssim: float | None = None
    iou: float | None = None
    mse: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in vars(self).items() if v is not None}


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _same_shape(a, b)
    d = np.clip(a, 0.0, 1.0) - np.clip(b, 0.0, 1.0)
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    err = mse(a, b)
    if err < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def to_gray(x, height: int, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.mean(axis=2)
    return x.reshape(height, width, -1).mean(axis=2)


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, height: int, width: int, data_range: float = 1.0) -> float:
    """Mean single-scale SSIM over all valid 11x11 windows of the channel-mean
    grayscale images; inputs are clamped to [0, 1]."""
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise DomainError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {height}x{width}")
    a, b = _same_shape(a, b)
    x = np.clip(to_gray(a, height, width), 0.0, 1.0)
    y = np.clip(to_gray(b, height, width), 0.0, 1.0)
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter(x, g), _filter(y, g)
    sxx = _filter(x * x, g) - mx * mx
    syy = _filter(y * y, g) - my * my
    sxy = _filter(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def iou(pred, gt, threshold: float = 0.5) -> float:
    pred, gt = _same_shape(pred, gt)
    p = pred > threshold
    g = gt > threshold
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def image_report(pred, target, height: int, width: int) -> MetricReport:
    r = MetricReport(psnr=psnr(pred, target), mse=mse(pred, target))
    if height >= SSIM_WINDOW and width >= SSIM_WINDOW:
        r.ssim = ssim(pred, target, height, width)
    return r
