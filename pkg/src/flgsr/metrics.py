"""Image quality and recovery-error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    rel_err: float
    wall_time_s: float = 0.0


def _pair(reference, recovered):
    a = np.asarray(reference, dtype=float)
    b = np.asarray(recovered, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, recovered, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(reference, recovered)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation restricted to windows fully inside the image
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim_map(reference, recovered, peak: float = 1.0) -> np.ndarray:
    """Local SSIM at every window position fully inside the image."""
    a, b = _pair(reference, recovered)
    if min(a.shape) < SSIM_WINDOW:
        raise DomainError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(reference, recovered, peak: float = 1.0) -> float:
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5), valid positions only."""
    return float(np.mean(ssim_map(reference, recovered, peak)))


def rel_error(reference, recovered) -> float:
    """``||recovered - reference||_F / ||reference||_F``."""
    a, b = _pair(reference, recovered)
    ref = float(np.linalg.norm(a))
    if ref == 0.0:
        raise DomainError("relative error is undefined for a zero reference")
    return float(np.linalg.norm(b - a)) / ref
