"""Quality metrics and Bjontegaard rate deltas.

All image metrics take (H, W, 3) arrays in [0, 1].  MS-SSIM is the 5-scale
variant with the standard weights; scales are built by 2x2 mean pooling and
each scale is filtered with an 11-tap Gaussian (sigma 1.5) under reflect
padding, so the minimum supported side is 160 pixels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import PchipInterpolator

from . import perceptual
from .errors import EvalError, ShapeError
from .images import check_image, to_tensor

PSNR_CAP_DB = 99.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIDE = 160
_GAUSS_SIGMA = 1.5
_GAUSS_RADIUS = 5  # 11-tap window
_K1, _K2 = 0.01, 0.03


def _check_pair(a, b):
    a = check_image(a).astype(np.float64)
    b = check_image(b).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(1/mse) in dB, capped at 99 for exact matches."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def gaussian_taps(radius: int = _GAUSS_RADIUS,
                  sigma: float = _GAUSS_SIGMA) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return taps / taps.sum()


def _blur(channel: np.ndarray) -> np.ndarray:
    taps = gaussian_taps()
    out = ndimage.correlate1d(channel, taps, axis=0, mode="reflect")
    return ndimage.correlate1d(out, taps, axis=1, mode="reflect")


def _ssim_and_cs(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    c1, c2 = _K1 ** 2, _K2 ** 2
    mu_a, mu_b = _blur(a), _blur(b)
    var_a = _blur(a * a) - mu_a ** 2
    var_b = _blur(b * b) - mu_b ** 2
    cov = _blur(a * b) - mu_a * mu_b
    cs_map = (2 * cov + c2) / (var_a + var_b + c2)
    lum_map = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return float(np.mean(lum_map * cs_map)), float(np.mean(cs_map))


def _downsample2(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    trimmed = channel[: h - h % 2, : w - w % 2]
    return trimmed.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(a, b) -> float:
    """5-scale MS-SSIM averaged over color channels."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < MS_SSIM_MIN_SIDE:
        raise ShapeError(
            f"MS-SSIM needs images at least {MS_SSIM_MIN_SIDE} px on a side "
            f"(5 scales x 11-tap window), got {a.shape[0]}x{a.shape[1]}")
    channel_scores = []
    for c in range(3):
        ca, cb = a[..., c], b[..., c]
        score = 1.0
        for level, weight in enumerate(MS_SSIM_WEIGHTS):
            ssim_val, cs_val = _ssim_and_cs(ca, cb)
            if level == len(MS_SSIM_WEIGHTS) - 1:
                score *= max(ssim_val, 0.0) ** weight
            else:
                score *= max(cs_val, 0.0) ** weight
                ca, cb = _downsample2(ca), _downsample2(cb)
        channel_scores.append(score)
    return float(np.mean(channel_scores))


def perceptual_proxy(a, b) -> float:
    """Random-feature perceptual distance on numpy images."""
    import torch

    a, b = _check_pair(a, b)
    return perceptual.perceptual_distance(
        to_tensor(a, torch.float64), to_tensor(b, torch.float64))


@dataclass
class RdPoint:
    bpp: float
    metrics: dict[str, float] = field(default_factory=dict)


@dataclass
class RdCurve:
    points: list[RdPoint] = field(default_factory=list)

    def sorted_by_bpp(self) -> list[RdPoint]:
        return sorted(self.points, key=lambda p: p.bpp)

    def series(self, metric: str) -> list[tuple[float, float]]:
        return [(p.bpp, p.metrics[metric]) for p in self.sorted_by_bpp()]


def _log_rate_interpolant(points):
    """(metric, log2 rate) interpolant over the curve's metric range."""
    pts = sorted(points, key=lambda p: p[1])
    metric = np.array([p[1] for p in pts], dtype=np.float64)
    log_rate = np.log2([p[0] for p in pts])
    if np.any(np.diff(metric) <= 0):
        raise EvalError("metric values must be distinct across the curve")
    if len(pts) < 3:
        raise EvalError("BD-rate needs at least 3 points per curve")
    if len(pts) == 3:
        warnings.warn("only 3 RD points: quadratic fallback for BD-rate")
        coeffs = np.polyfit(metric, log_rate, 2)
        anti = np.polyint(coeffs)
        return (lambda lo, hi: np.polyval(anti, hi) - np.polyval(anti, lo),
                metric[0], metric[-1])
    interp = PchipInterpolator(metric, log_rate)
    anti = interp.antiderivative()
    return (lambda lo, hi: float(anti(hi) - anti(lo)), metric[0], metric[-1])


def bd_rate(anchor, test, metric: str | None = None) -> float:
    """Average rate difference of test vs anchor at equal quality, percent.

    Accepts RdCurve plus a metric name, or raw (rate, metric) pairs.
    Negative means the test curve spends fewer bits.
    """
    if isinstance(anchor, RdCurve):
        anchor = anchor.series(metric)
    if isinstance(test, RdCurve):
        test = test.series(metric)
    for rate, _ in list(anchor) + list(test):
        if rate <= 0:
            raise EvalError("rates must be positive")
    int_a, lo_a, hi_a = _log_rate_interpolant(anchor)
    int_t, lo_t, hi_t = _log_rate_interpolant(test)
    lo, hi = max(lo_a, lo_t), min(hi_a, hi_t)
    if not lo < hi:
        raise EvalError("RD curves have no overlapping metric range")
    delta = (int_t(lo, hi) - int_a(lo, hi)) / (hi - lo)
    return 100.0 * (2.0 ** delta - 1.0)
