"""Color statistics and the Color Triangle descriptor."""
from __future__ import annotations

import numpy as np

from ..imgproc import Region
from .catalog import COLOR_CHANNELS
from .common import FeatureError, require_area

N_HIST_BINS = 16


def color_basic(channels: dict[str, np.ndarray], mask: np.ndarray) -> np.ndarray:
    """Mean and population variance of each channel inside the mask."""
    require_area(mask, 16, "color_basic")
    out = []
    for ch in COLOR_CHANNELS:
        v = channels[ch][mask]
        out += [v.mean(), v.var()]
    return np.array(out)


def hist_nonzero(values: np.ndarray, bins: int = N_HIST_BINS) -> int:
    idx = np.clip(np.floor(np.asarray(values) * bins / 256.0).astype(np.int64), 0, bins - 1)
    return int(np.count_nonzero(np.bincount(idx, minlength=bins)))


def color_hist_nonzero(channels: dict[str, np.ndarray], mask: np.ndarray) -> np.ndarray:
    """Number of occupied bins in a 16-bin histogram over [0, 255] per channel."""
    require_area(mask, 16, "color_hist_nonzero")
    return np.array([hist_nonzero(channels[ch][mask]) for ch in COLOR_CHANNELS], dtype=np.float64)


class TriangleLayout:
    """Per-pixel polar geometry of a region about its centre of mass.

    ``angle`` is measured from the first boundary pixel (the left-most one) in the
    trace direction, and ``rho = r / R(angle)`` where ``R`` interpolates the
    boundary distance along the ray.
    """

    def __init__(self, region: Region):
        boundary = region.boundary
        pts = boundary.points.astype(np.float64)
        ys, xs = np.nonzero(region.local)
        xs = xs + region.offset[0]
        ys = ys + region.offset[1]
        cx, cy = region.centroid
        self.center = (cx, cy)
        self.n_boundary = len(pts)
        self.area = region.area

        ix, iy = int(np.floor(cx + 0.5)), int(np.floor(cy + 0.5))
        lx, ly = ix - region.offset[0], iy - region.offset[1]
        h, w = region.local.shape
        self.center_outside = not (0 <= lx < w and 0 <= ly < h and region.local[ly, lx])

        two_pi = 2 * np.pi
        phi_b = np.arctan2(pts[:, 1] - cy, pts[:, 0] - cx)
        phi0 = phi_b[0]
        psi_b = np.mod(phi_b - phi0, two_pi)
        psi_b[0] = 0.0
        self.boundary_angle = np.maximum.accumulate(psi_b)
        r_b = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        order = np.argsort(psi_b, kind="stable")

        self.angle = np.mod(np.arctan2(ys - cy, xs - cx) - phi0, two_pi)
        r = np.hypot(xs - cx, ys - cy)
        big_r = np.interp(self.angle, psi_b[order], r_b[order], period=two_pi)
        self.rho = np.where(big_r > 0, r / np.where(big_r > 0, big_r, 1.0), 0.0)
        self.xs, self.ys = xs, ys

    def parts(self, pa: int) -> np.ndarray:
        starts = (np.arange(pa) * self.n_boundary) // pa
        edges = self.boundary_angle[starts]
        return np.searchsorted(edges, self.angle, side="right") - 1

    def bands(self, sp: int) -> np.ndarray:
        return np.minimum(sp - 1, np.floor(sp * self.rho).astype(np.int64))


def triangle_vectors(values: np.ndarray, parts: np.ndarray, bands: np.ndarray, pa: int, sp: int) -> np.ndarray:
    """``(pa, sp)`` matrix of band means; empty bands fall back to the part mean and
    empty parts to the lesion mean."""
    v = values - values.min()
    cell = parts * sp + bands
    sums = np.bincount(cell, weights=v, minlength=pa * sp).reshape(pa, sp)
    counts = np.bincount(cell, minlength=pa * sp).reshape(pa, sp)
    part_n = counts.sum(axis=1)
    part_sum = sums.sum(axis=1)
    part_mean = np.where(part_n > 0, part_sum / np.maximum(part_n, 1), v.mean())
    vec = np.where(counts > 0, sums / np.maximum(counts, 1), part_mean[:, None])
    return vec


def max_pairwise_distance(vec: np.ndarray) -> float:
    diff = vec[:, None, :] - vec[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


def color_triangle(channel: np.ndarray, region: Region, pa: int, sp: int, layout: TriangleLayout | None = None) -> float:
    """Largest Euclidean distance between the band-mean vectors of the ``pa`` parts."""
    layout = layout or TriangleLayout(region)
    if layout.n_boundary < 2 * pa:
        raise FeatureError(f"color_triangle: boundary length {layout.n_boundary} < {2 * pa}")
    if layout.area < pa * sp:
        raise FeatureError(f"color_triangle: area {layout.area} < {pa * sp}")
    values = channel[layout.ys, layout.xs].astype(np.float64)
    vec = triangle_vectors(values, layout.parts(pa), layout.bands(sp), pa, sp)
    return max_pairwise_distance(vec)
