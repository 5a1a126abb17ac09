"""Texture descriptors: horizontal GLCM statistics, edge density and sign LBP."""
from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.feature import canny
from skimage.filters import threshold_otsu

from .common import FeatureError, require_area

CANNY_SIGMA = 1.4

# 3x3 ring in circular order, as (dy, dx)
RING = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def quantize(values: np.ndarray, levels: int) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * levels / 256.0), 0, levels - 1).astype(np.int64)


def glcm_matrix(gray: np.ndarray, mask: np.ndarray, levels: int) -> np.ndarray:
    """Normalised co-occurrences of (pixel, right neighbour) with both in the mask."""
    q = quantize(gray, levels)
    both = mask[:, :-1] & mask[:, 1:]
    if not both.any():
        raise FeatureError(f"glcm{levels}: no horizontal pixel pair inside the mask")
    i = q[:, :-1][both]
    j = q[:, 1:][both]
    counts = np.bincount(i * levels + j, minlength=levels * levels).reshape(levels, levels)
    return counts / counts.sum()


def glcm_props(p: np.ndarray) -> np.ndarray:
    """``[contrast, energy, correlation, homogeneity]`` of a normalised GLCM."""
    levels = p.shape[0]
    i, j = np.indices((levels, levels), dtype=np.float64)
    contrast = float(np.sum(p * (i - j) ** 2))
    energy = float(np.sum(p * p))
    homogeneity = float(np.sum(p / (1.0 + np.abs(i - j))))
    mu_i = np.sum(i * p)
    mu_j = np.sum(j * p)
    sd_i = np.sqrt(np.sum(p * (i - mu_i) ** 2))
    sd_j = np.sqrt(np.sum(p * (j - mu_j) ** 2))
    if sd_i * sd_j <= 1e-12:
        correlation = 0.0
    else:
        correlation = float(np.sum(p * (i - mu_i) * (j - mu_j)) / (sd_i * sd_j))
    return np.array([contrast, energy, correlation, homogeneity])


def glcm_features(gray: np.ndarray, mask: np.ndarray, levels: int) -> np.ndarray:
    if levels not in (32, 64):
        raise ValueError("levels must be 32 or 64")
    return glcm_props(glcm_matrix(gray, mask, levels))


def _masked_smooth(gray: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    m = mask.astype(np.float64)
    num = ndimage.gaussian_filter(gray * m, sigma, mode="constant")
    den = ndimage.gaussian_filter(m, sigma, mode="constant")
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def gradient_threshold(gray: np.ndarray, mask: np.ndarray, sigma: float = CANNY_SIGMA) -> float | None:
    """Otsu threshold of the in-mask gradient magnitude; None when it is flat."""
    s = _masked_smooth(gray, mask, sigma)
    mag = np.hypot(ndimage.sobel(s, axis=0), ndimage.sobel(s, axis=1))
    inner = ndimage.binary_erosion(mask, border_value=0)
    vals = mag[inner] if inner.any() else mag[mask]
    if vals.size == 0 or np.ptp(vals) <= 1e-9:
        return None
    return float(threshold_otsu(vals))


def edge_map(gray: np.ndarray, mask: np.ndarray, sigma: float = CANNY_SIGMA) -> np.ndarray:
    t = gradient_threshold(gray, mask, sigma)
    if t is None or t <= 0:
        return np.zeros(mask.shape, dtype=bool)
    return canny(gray, sigma=sigma, low_threshold=0.5 * t, high_threshold=t, mask=mask) & mask


def edge_density(gray: np.ndarray, mask: np.ndarray, sigma: float = CANNY_SIGMA) -> float:
    """Canny edge pixels inside the mask divided by the mask area."""
    area = require_area(mask, 16, "edge_density")
    return float(edge_map(np.asarray(gray, dtype=np.float64), mask, sigma).sum()) / area


def _min_rotation(code: int) -> int:
    return min(((code >> r) | (code << (8 - r))) & 0xFF for r in range(8))


ROTATION_MIN = np.array([_min_rotation(c) for c in range(256)], dtype=np.int64)
LBP_CLASSES = np.unique(ROTATION_MIN)  # 36 minimal codes, ascending
LBP_CLASS_OF = np.searchsorted(LBP_CLASSES, ROTATION_MIN)
UNIFORM_CODE_CLASS = int(np.searchsorted(LBP_CLASSES, 0xFF))


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """8-bit sign codes ``sum_p s(g_p - g_c) 2^p`` for interior pixels (border: -1)."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    codes = np.full((h, w), -1, dtype=np.int64)
    if h < 3 or w < 3:
        return codes
    c = g[1:-1, 1:-1]
    acc = np.zeros(c.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(RING):
        nb = g[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        acc |= (nb >= c).astype(np.int64) << bit
    codes[1:-1, 1:-1] = acc
    return codes


def lbp_s_histogram(gray: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """L1-normalised histogram over the 36 rotation-invariant sign-LBP classes."""
    require_area(mask, 64, "lbp")
    codes = lbp_codes(gray)
    sel = codes[mask & (codes >= 0)]
    if sel.size == 0:
        raise FeatureError("lbp: no mask pixel with a complete 3x3 neighbourhood")
    hist = np.bincount(LBP_CLASS_OF[sel], minlength=len(LBP_CLASSES)).astype(np.float64)
    return hist / hist.sum()
