"""Hierarchical lesion segmentation.

A coarse pass on a downsampled copy runs Otsu thresholding and graph-based (MST)
region merging independently, keeps the best-scoring central candidate of each,
and fuses them. A fine pass repeats the same procedure on a padded crop of the
full-resolution image around the coarse result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit
from scipy import ndimage

from .imgproc import (
    Region,
    check_image,
    downsample,
    fill_holes,
    largest_component,
    majority_filter,
    regions_from_labels,
    resize_mask,
    to_gray,
)

METHODS = ("otsu", "mst")


class SegmentationError(RuntimeError):
    pass


class NoLesionFound(SegmentationError):
    def __init__(self, msg: str = "no lesion found"):
        super().__init__(msg)


@dataclass
class SegConfig:
    max_dim: int = 256
    valid_fraction: float = 0.8
    k_coarse: float = 400.0
    k_fine: float | None = None  # None: k_coarse / 2
    min_size_coarse: float = 0.002  # fraction of masked pixels
    min_size_fine: float = 0.01
    crop_padding: float = 0.25
    majority_window: int = 5
    mst_sigma: float = 0.8
    dark_lesion: bool = True

    def __post_init__(self):
        for name in ("valid_fraction", "min_size_coarse", "min_size_fine", "crop_padding"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.k_coarse <= 0 or (self.k_fine is not None and self.k_fine <= 0):
            raise ValueError("MST scale k must be positive")
        if self.majority_window < 3 or self.majority_window % 2 == 0:
            raise ValueError("majority_window must be odd and >= 3")
        if self.max_dim < 32:
            raise ValueError("max_dim must be >= 32")

    @property
    def k_fine_value(self) -> float:
        return self.k_coarse / 2 if self.k_fine is None else self.k_fine


# ---------------------------------------------------------------- Otsu


def _quantize(gray: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(gray), 0, 255).astype(np.int64)


def otsu_level(hist: np.ndarray) -> int:
    """Threshold ``t`` splitting levels into ``[0, t)`` and ``[t, L)`` with maximal
    between-class variance. Evaluated in exact rational arithmetic; ties go to the
    lowest ``t``.
    """
    counts = [int(c) for c in hist]
    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))
    if sum(1 for c in counts if c) < 2:
        raise SegmentationError("Otsu threshold needs at least two distinct levels")
    best_t, best = None, Fraction(-1)
    n0 = s0 = 0
    for t in range(1, len(counts)):
        n0 += counts[t - 1]
        s0 += (t - 1) * counts[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_sum - s0
        # N^2 * between-class variance = (n1 s0 - n0 s1)^2 / (n0 n1)
        val = Fraction((n1 * s0 - n0 * s1) ** 2, n0 * n1)
        if val > best:
            best, best_t = val, t
    return best_t


def otsu_threshold(gray: np.ndarray, mask: np.ndarray | None = None, dark: bool = True):
    """Otsu threshold over the 256-bin histogram of masked gray levels.

    Returns ``(t, seg)`` where ``seg`` marks masked pixels darker than ``t``
    (or at least ``t`` when ``dark`` is False).
    """
    q = _quantize(gray)
    if mask is None:
        mask = np.ones(q.shape, dtype=bool)
    hist = np.bincount(q[mask], minlength=256)
    t = otsu_level(hist)
    seg = (q < t) if dark else (q >= t)
    return t, seg & mask


# ---------------------------------------------------------------- MST


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _fh_segment(n, ea, eb, ew, k, min_size):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    internal = np.zeros(n)
    for i in range(len(ea)):
        a = _find(parent, ea[i])
        b = _find(parent, eb[i])
        if a == b:
            continue
        w = ew[i]
        if w <= internal[a] + k / size[a] and w <= internal[b] + k / size[b]:
            if size[a] < size[b]:
                a, b = b, a
            parent[b] = a
            size[a] += size[b]
            internal[a] = w
    for i in range(len(ea)):
        a = _find(parent, ea[i])
        b = _find(parent, eb[i])
        if a != b and (size[a] < min_size or size[b] < min_size):
            if size[a] < size[b]:
                a, b = b, a
            parent[b] = a
            size[a] += size[b]
    # compact labels numbered by first appearance
    remap = np.full(n, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    nxt = 0
    for i in range(n):
        r = _find(parent, i)
        if remap[r] < 0:
            remap[r] = nxt
            nxt += 1
        out[i] = remap[r]
    return out


@njit(cache=True)
def _order_runs(order, keys):
    # within each run of equal keys, restore increasing index order
    n = len(order)
    i = 0
    while i < n:
        j = i + 1
        while j < n and keys[order[j]] == keys[order[i]]:
            j += 1
        if j - i > 1:
            order[i:j] = np.sort(order[i:j])
        i = j
    return order


def stable_argsort(keys: np.ndarray) -> np.ndarray:
    """Same result as ``np.argsort(keys, kind="stable")``, several times faster."""
    keys = np.ascontiguousarray(keys)
    return _order_runs(np.argsort(keys, kind="quicksort"), keys)


# Edge enumeration order: direction-major (E, S, SE, SW), raster order within a direction.
EDGE_DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


def grid_edges(values: np.ndarray, mask: np.ndarray):
    """8-connected edges between masked pixels with weights ``|v_a - v_b|``.

    Returns node ids per pixel (``-1`` outside the mask) and edge arrays in the
    documented enumeration order.
    """
    h, w = mask.shape
    ids = np.full((h, w), -1, dtype=np.int64)
    ids[mask] = np.arange(int(mask.sum()))
    ea, eb, ew = [], [], []
    for dy, dx in EDGE_DIRECTIONS:
        ys0, ys1 = 0, h - dy
        xs0, xs1 = max(0, -dx), w - max(0, dx)
        a = ids[ys0:ys1, xs0:xs1]
        b = ids[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
        keep = (a >= 0) & (b >= 0)
        va = values[ys0:ys1, xs0:xs1][keep]
        vb = values[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx][keep]
        ea.append(a[keep])
        eb.append(b[keep])
        ew.append(np.abs(va - vb))
    return ids, np.concatenate(ea), np.concatenate(eb), np.concatenate(ew)


def mst_segment(gray: np.ndarray, mask: np.ndarray | None, k: float, min_size: int) -> np.ndarray:
    """Graph-based region merging on the masked pixel grid.

    Returns a label map with ``-1`` outside the mask and labels ``0..n-1``
    numbered by first appearance in raster order.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    gray = np.asarray(gray, dtype=np.float64)
    if mask is None:
        mask = np.ones(gray.shape, dtype=bool)
    ids, ea, eb, ew = grid_edges(gray, mask)
    n = int(mask.sum())
    labels = np.full(gray.shape, -1, dtype=np.int64)
    if n == 0:
        return labels
    order = stable_argsort(ew)
    labels[mask] = _fh_segment(n, ea[order], eb[order], ew[order], float(k), int(min_size))
    return labels


# ---------------------------------------------------------------- ROI selection


def roi_score(area: float, cx: float, cy: float, width: float, height: float) -> float:
    """Centrality-weighted area ``A * max(0, 1 - 2 * d)^4``.

    ``(cx, cy)`` are continuous image coordinates and ``d`` is the distance of the
    centroid from the image centre in coordinates normalised by width and height.
    """
    d = math.sqrt((cx / width - 0.5) ** 2 + (cy / height - 0.5) ** 2)
    return area * max(0.0, 1.0 - 2.0 * d) ** 4


def _center(region: Region) -> tuple[float, float]:
    # pixel (i, j) covers [i, i+1) x [j, j+1); its centre is at +0.5
    cx, cy = region.centroid
    return cx + 0.5, cy + 0.5


def filter_and_score_rois(
    regions: list[Region], width: int, height: int, valid_fraction: float = 0.8
) -> Region:
    """Drop border-touching and off-centre candidates, return the best-scoring one."""
    if not regions:
        raise NoLesionFound()
    lo_x, hi_x = width * (1 - valid_fraction) / 2, width * (1 + valid_fraction) / 2
    lo_y, hi_y = height * (1 - valid_fraction) / 2, height * (1 + valid_fraction) / 2
    best, best_score = None, -1.0
    for r in regions:
        if r.touches_border():
            continue
        cx, cy = _center(r)
        if not (lo_x <= cx <= hi_x and lo_y <= cy <= hi_y):
            continue
        s = roi_score(r.area, cx, cy, width, height)
        if s > best_score:
            best, best_score = r, s
    if best is None:
        raise NoLesionFound()
    return best


def fuse_masks(otsu_seg: np.ndarray, mst_seg: np.ndarray, window: int = 5) -> np.ndarray:
    """Union, keep the largest 8-connected component, majority-filter, fill holes."""
    if otsu_seg.shape != mst_seg.shape:
        raise ValueError("masks must have equal dimensions")
    union = otsu_seg | mst_seg
    if not union.any():
        raise NoLesionFound("no lesion found: both segmentations are empty")
    blob = largest_component(union)
    smooth = fill_holes(majority_filter(blob, window))
    if not smooth.any():  # filter erased a tiny blob
        smooth = fill_holes(blob)
    return largest_component(smooth)


# ---------------------------------------------------------------- pipeline


def _smooth(gray: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(gray, sigma) if sigma > 0 else gray


@dataclass
class Candidates:
    """Best-scoring region per method (methods that found nothing are absent)."""

    masks: dict
    scores: dict
    otsu_threshold: int | None = None


def find_candidates(
    gray: np.ndarray,
    mask: np.ndarray,
    *,
    k: float,
    min_size_fraction: float,
    valid_fraction: float,
    sigma: float,
    dark: bool = True,
    methods=METHODS,
) -> Candidates:
    h, w = gray.shape
    out = Candidates({}, {})

    if "otsu" in methods:
        try:
            out.otsu_threshold, seg = otsu_threshold(gray, mask, dark)
            labels, n = ndimage.label(seg, structure=np.ones((3, 3), bool))
            best = filter_and_score_rois(regions_from_labels(labels, n), w, h, valid_fraction)
            out.masks["otsu"] = best.mask
            out.scores["otsu"] = roi_score(best.area, *_center(best), w, h)
        except SegmentationError:
            pass

    if "mst" in methods:
        min_size = max(1, int(round(min_size_fraction * int(mask.sum()))))
        labels = mst_segment(_smooth(gray, sigma), mask, k, min_size)
        try:
            best = filter_and_score_rois(regions_from_labels(labels + 1), w, h, valid_fraction)
            out.masks["mst"] = best.mask
            out.scores["mst"] = roi_score(best.area, *_center(best), w, h)
        except SegmentationError:
            pass
    return out


@dataclass
class StageResult:
    region: Region
    otsu: np.ndarray  # selected Otsu candidate (may be empty)
    mst: np.ndarray  # selected MST candidate (may be empty)
    fused: np.ndarray
    otsu_threshold: int | None = None
    scores: dict = field(default_factory=dict)


def fuse_candidates(c: Candidates, shape, window: int, methods=METHODS) -> StageResult:
    empty = np.zeros(shape, dtype=bool)
    picked = {m: (c.masks.get(m, empty) if m in methods else empty) for m in METHODS}
    fused = fuse_masks(picked["otsu"], picked["mst"], window)
    scores = {m: v for m, v in c.scores.items() if m in methods}
    return StageResult(Region.from_mask(fused), picked["otsu"], picked["mst"], fused, c.otsu_threshold, scores)


def _stage_params(cfg: SegConfig, fine: bool) -> dict:
    return dict(
        k=cfg.k_fine_value if fine else cfg.k_coarse,
        min_size_fraction=cfg.min_size_fine if fine else cfg.min_size_coarse,
        valid_fraction=1.0 if fine else cfg.valid_fraction,
        sigma=cfg.mst_sigma,
        dark=cfg.dark_lesion,
    )


def localize(gray: np.ndarray, mask: np.ndarray, *, window: int = 5, methods=METHODS, **params) -> StageResult:
    """One Otsu + MST + score + fuse pass over a gray plane restricted to ``mask``."""
    cands = find_candidates(gray, mask, methods=methods, **params)
    return fuse_candidates(cands, gray.shape, window, methods)


def _coarse_inputs(image: np.ndarray, skin: np.ndarray, cfg: SegConfig):
    image = check_image(image)
    if not skin.any():
        raise NoLesionFound("no lesion found: skin mask is empty")
    small = downsample(image, cfg.max_dim)
    small_skin = resize_mask(skin, small.shape[:2]) if small.shape[:2] != skin.shape else skin
    return to_gray(small), small_skin


def coarse_localize(image: np.ndarray, skin: np.ndarray, cfg: SegConfig | None = None, methods=METHODS) -> StageResult:
    cfg = cfg or SegConfig()
    gray, small_skin = _coarse_inputs(image, skin, cfg)
    return localize(gray, small_skin, window=cfg.majority_window, methods=methods, **_stage_params(cfg, False))


@dataclass
class LesionSegmentation:
    coarse: StageResult
    coarse_shape: tuple[int, int]
    crop: tuple[int, int, int, int]  # (x0, y0, x1, y1) in original coordinates
    mask: np.ndarray  # fine mask at original resolution
    coarse_upsampled: np.ndarray
    fine: StageResult | None = None
    fine_fallback: bool = False

    @property
    def region(self) -> Region:
        return Region.from_mask(self.mask)

    def summary(self) -> dict:
        return {
            "crop": list(self.crop),
            "coarse_shape": list(self.coarse_shape),
            "coarse_area": int(self.coarse.fused.sum()),
            "fine_area": int(self.mask.sum()),
            "coarse_scores": self.coarse.scores,
            "fine_scores": self.fine.scores if self.fine else {},
            "fine_fallback": self.fine_fallback,
        }


def crop_rect(coarse: Region, coarse_shape, full_shape, padding: float) -> tuple[int, int, int, int]:
    sy = full_shape[0] / coarse_shape[0]
    sx = full_shape[1] / coarse_shape[1]
    x0, y0, x1, y1 = coarse.bbox
    fx0, fx1, fy0, fy1 = x0 * sx, x1 * sx, y0 * sy, y1 * sy
    px, py = padding * (fx1 - fx0), padding * (fy1 - fy0)
    cx0 = max(0, int(math.floor(fx0 - px)))
    cy0 = max(0, int(math.floor(fy0 - py)))
    cx1 = min(full_shape[1], int(math.ceil(fx1 + px)))
    cy1 = min(full_shape[0], int(math.ceil(fy1 + py)))
    return cx0, cy0, cx1, cy1


class _Refiner:
    """Fine stage with candidate caching per crop rectangle."""

    def __init__(self, image, skin, cfg: SegConfig):
        self.image, self.skin, self.cfg = image, skin, cfg
        self._cache: dict = {}

    def candidates(self, rect, methods) -> Candidates:
        x0, y0, x1, y1 = rect
        key = (rect, tuple(sorted(methods)))
        if key not in self._cache:
            gray = to_gray(self.image[y0:y1, x0:x1])
            crop_skin = np.ones(gray.shape, bool) if self.skin is None else self.skin[y0:y1, x0:x1]
            self._cache[key] = find_candidates(gray, crop_skin, methods=methods, **_stage_params(self.cfg, True))
        return self._cache[key]

    def refine(self, coarse: StageResult, coarse_shape, methods) -> LesionSegmentation:
        cfg = self.cfg
        full_shape = self.image.shape[:2]
        rect = crop_rect(coarse.region, coarse_shape, full_shape, cfg.crop_padding)
        x0, y0, x1, y1 = rect
        if x1 - x0 < 16 or y1 - y0 < 16:
            raise SegmentationError(f"degenerate crop {x1 - x0}x{y1 - y0} (< 16 px side)")
        up = resize_mask(coarse.fused, full_shape)
        full = np.zeros(full_shape, dtype=bool)
        try:
            fine = fuse_candidates(self.candidates(rect, methods), (y1 - y0, x1 - x0), cfg.majority_window, methods)
        except NoLesionFound:
            full[y0:y1, x0:x1] = up[y0:y1, x0:x1]
            return LesionSegmentation(coarse, coarse_shape, rect, largest_component(full), up, None, True)
        full[y0:y1, x0:x1] = fine.fused
        return LesionSegmentation(coarse, coarse_shape, rect, full, up, fine, False)


def refine_border(
    image: np.ndarray,
    coarse: StageResult,
    skin: np.ndarray | None = None,
    cfg: SegConfig | None = None,
    methods=METHODS,
    coarse_shape: tuple[int, int] | None = None,
) -> LesionSegmentation:
    """Crop the padded coarse box from the full image and segment it again.

    When nothing survives in the crop the upsampled coarse mask is kept and the
    result is flagged with ``fine_fallback``.
    """
    cfg = cfg or SegConfig()
    if coarse_shape is None:
        coarse_shape = coarse.fused.shape
    return _Refiner(image, skin, cfg).refine(coarse, coarse_shape, methods)


def segment_lesion(
    image: np.ndarray, skin: np.ndarray | None = None, cfg: SegConfig | None = None, methods=METHODS
) -> LesionSegmentation:
    """Coarse localization followed by border refinement."""
    cfg = cfg or SegConfig()
    image = check_image(image)
    if skin is None:
        skin = np.ones(image.shape[:2], dtype=bool)
    coarse = coarse_localize(image, skin, cfg, methods)
    return refine_border(image, coarse, skin, cfg, methods, coarse.fused.shape)


def segment_variants(
    image: np.ndarray, skin: np.ndarray | None = None, cfg: SegConfig | None = None, variants=(METHODS, ("otsu",), ("mst",))
) -> dict:
    """Run several method subsets sharing the per-method work.

    Returns ``{"+".join(methods): LesionSegmentation or SegmentationError}``; each
    entry equals what ``segment_lesion`` gives for that subset.
    """
    cfg = cfg or SegConfig()
    image = check_image(image)
    if skin is None:
        skin = np.ones(image.shape[:2], dtype=bool)
    out = {}
    try:
        gray, small_skin = _coarse_inputs(image, skin, cfg)
    except SegmentationError as exc:
        return {"+".join(v): exc for v in variants}
    needed = sorted({m for v in variants for m in v})
    cands = find_candidates(gray, small_skin, methods=needed, **_stage_params(cfg, False))
    refiner = _Refiner(image, skin, cfg)
    for v in variants:
        name = "+".join(v)
        try:
            coarse = fuse_candidates(cands, gray.shape, cfg.majority_window, v)
            out[name] = refiner.refine(coarse, gray.shape, v)
        except SegmentationError as exc:
            out[name] = exc
    return out


def tdr(gt: np.ndarray, seg: np.ndarray) -> float:
    """True detection rate ``100 * |GT & SEG| / |GT|``."""
    gt = np.asarray(gt, dtype=bool)
    seg = np.asarray(seg, dtype=bool)
    if gt.shape != seg.shape:
        raise ValueError("masks must have equal dimensions")
    n = int(gt.sum())
    if n == 0:
        raise ValueError("ground truth mask is empty")
    return 100.0 * int((gt & seg).sum()) / n
