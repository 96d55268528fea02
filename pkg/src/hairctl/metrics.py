"""Frame similarity metrics for regression checks (PSNR, single-scale SSIM)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


def _pixels(img):
    px = getattr(img, "pixels", img)
    return np.asarray(px)


def _pair(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValidationError("image", f"dimension mismatch {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b) -> float:
    """10*log10(255^2 / MSE) over every channel; identical (or near enough) images give 99 dB."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse)))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def luma(img):
    px = _pixels(img).astype(np.float64)
    if px.ndim == 2:
        return px
    return px[..., :3] @ LUMA


def ssim(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=255.0) -> float:
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < size:
        raise ValidationError("image", f"SSIM needs both sides >= {size}, got {a.shape[:2]}")
    x, y = luma(a), luma(b)
    w = gaussian_window(size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(img):
        # valid windows only; the window is separable but the direct form keeps this short
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, (size, size)), w)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())
