"""Border and asymmetry descriptors."""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from skimage.morphology import convex_hull_image

from ..imgproc import Boundary, Region
from .common import FeatureError, require_area

log = logging.getLogger(__name__)

# Boundary points are pixel centres; the pixel outline lies half a pixel further
# out, which adds 2*pi*0.5 to the perimeter of any convex outline.
OUTLINE_OFFSET = math.pi


def chain_length(points: np.ndarray) -> float:
    d = np.diff(np.vstack([points, points[:1]]).astype(np.float64), axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def perimeter(boundary: Boundary) -> float:
    return chain_length(boundary.points) + OUTLINE_OFFSET


def hull_perimeter(points: np.ndarray) -> float:
    pts = np.unique(points.astype(np.float64), axis=0)
    try:
        hull = ConvexHull(pts)
    except QhullError:  # collinear
        return 2 * float(np.ptp(pts, axis=0).max()) + OUTLINE_OFFSET
    return chain_length(pts[hull.vertices]) + OUTLINE_OFFSET


def border_shape(region: Region) -> np.ndarray:
    """``[compactness, solidity, convexity, dist_var]``.

    compactness = 4 pi A / P^2, solidity = A / A_hull, convexity = P_hull / P,
    dist_var = var(|b - c|) / mean(|b - c|)^2 over boundary points ``b``.
    """
    b = region.boundary
    if b.degenerate:
        raise FeatureError("border_shape: degenerate boundary")
    area = region.area
    per = perimeter(b)
    hull_area = int(convex_hull_image(region.local).sum())
    cx, cy = region.centroid
    d = np.hypot(b.points[:, 0] - cx, b.points[:, 1] - cy)
    return np.array(
        [
            4 * math.pi * area / per**2,
            area / hull_area,
            hull_perimeter(b.points) / per,
            d.var() / d.mean() ** 2,
        ]
    )


def segment_bounds(n: int, parts: int) -> np.ndarray:
    return (np.arange(parts + 1) * n) // parts


def line_direction(points: np.ndarray) -> np.ndarray:
    """Unit direction of the orthogonal-regression (principal axis) line."""
    p = points.astype(np.float64)
    d = p - p.mean(axis=0)
    scatter = d.T @ d
    if not np.any(scatter):
        raise FeatureError("border_fitting: segment with zero spatial extent")
    _, vecs = np.linalg.eigh(scatter)
    return vecs[:, 1]


def fit_angles(points: np.ndarray, nt: int) -> np.ndarray:
    """Acute angles between consecutive fitted lines, wrap-around pair included."""
    n = len(points)
    if n < 4 * nt:
        raise FeatureError(f"border_fitting: boundary length {n} < {4 * nt}")
    bounds = segment_bounds(n, nt)
    dirs = np.array([line_direction(points[bounds[i] : bounds[i + 1]]) for i in range(nt)])
    cos = np.abs(np.sum(dirs * np.roll(dirs, -1, axis=0), axis=1))
    return np.arccos(np.clip(cos, 0.0, 1.0))


def border_fitting(boundary: Boundary | np.ndarray, nt: int) -> tuple[float, float]:
    """Mean and population variance of the turn angles between ``nt`` fitted lines."""
    pts = boundary.points if isinstance(boundary, Boundary) else np.asarray(boundary)
    ang = fit_angles(pts, nt)
    return float(ang.mean()), float(ang.var())


def principal_axes(xs: np.ndarray, ys: np.ndarray, rtol: float = 1e-9):
    """Eigenvectors of the coordinate covariance (major axis first).

    Returns ``(axes, isotropic)``; isotropic second moments fall back to the image axes.
    """
    cov = np.cov(np.vstack([xs, ys]).astype(np.float64), bias=True)
    vals, vecs = np.linalg.eigh(cov)
    if abs(vals[1] - vals[0]) <= rtol * max(abs(vals[1]), 1e-300):
        return np.eye(2), True
    return vecs[:, ::-1], False


def _fold_miss(xs, ys, cx, cy, e_keep, e_flip, local, offset) -> int:
    u = (xs - cx) * e_keep[0] + (ys - cy) * e_keep[1]
    v = (xs - cx) * e_flip[0] + (ys - cy) * e_flip[1]
    rx = cx + u * e_keep[0] - v * e_flip[0]
    ry = cy + u * e_keep[1] - v * e_flip[1]
    ix = np.floor(rx + 0.5).astype(np.int64) - offset[0]
    iy = np.floor(ry + 0.5).astype(np.int64) - offset[1]
    h, w = local.shape
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    hit = np.zeros(len(xs), dtype=bool)
    hit[inside] = local[iy[inside], ix[inside]]
    return int((~hit).sum())


def asymmetry(region: Region, return_flag: bool = False):
    """``(A_x + A_y) / A`` where ``A_x`` counts lesion pixels whose mirror image about
    the major principal axis (through the centroid) falls outside the lesion, and
    ``A_y`` the same for the minor axis.
    """
    require_area(region.local, 16, "asymmetry")
    ys, xs = np.nonzero(region.local)
    xs = (xs + region.offset[0]).astype(np.float64)
    ys = (ys + region.offset[1]).astype(np.float64)
    cx, cy = xs.mean(), ys.mean()
    axes, isotropic = principal_axes(xs, ys)
    if isotropic:
        log.debug("asymmetry: isotropic second moments, using image axes")
    e1, e2 = axes[:, 0], axes[:, 1]
    a_x = _fold_miss(xs, ys, cx, cy, e1, e2, region.local, region.offset)
    a_y = _fold_miss(xs, ys, cx, cy, e2, e1, region.local, region.offset)
    val = (a_x + a_y) / region.area
    return (val, isotropic) if return_flag else val
