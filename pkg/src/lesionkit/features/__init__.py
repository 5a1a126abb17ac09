"""The 116-feature lesion descriptor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..imgproc import Region, channel_planes, connected_components
from .catalog import (
    BF_SEGMENTS,
    CATALOG,
    CATEGORIES,
    CT_BANDS,
    CT_CHANNELS,
    CT_PARTS,
    GLCM_LEVELS,
    FeatureCatalog,
    FeatureDef,
)
from .color import TriangleLayout, color_basic, color_hist_nonzero, color_triangle, max_pairwise_distance, triangle_vectors
from .common import FeatureError
from .shape import asymmetry, border_fitting, border_shape
from .texture import edge_density, glcm_features, lbp_s_histogram

__all__ = [
    "CATALOG",
    "CATEGORIES",
    "FeatureCatalog",
    "FeatureDef",
    "FeatureError",
    "FeatureVector",
    "asymmetry",
    "border_fitting",
    "border_shape",
    "color_basic",
    "color_hist_nonzero",
    "color_triangle",
    "crop_to_mask",
    "edge_density",
    "extract_all",
    "glcm_features",
    "lbp_s_histogram",
]

PAD = 8


@dataclass
class FeatureVector:
    values: np.ndarray
    catalog: FeatureCatalog = field(default=CATALOG, repr=False)
    image_id: str = ""
    mask_id: str = ""
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.catalog.names, map(float, self.values)))


def crop_to_mask(image: np.ndarray, mask: np.ndarray, pad: int = PAD):
    """Bounding box of the mask grown by ``pad``; parts outside the image replicate the edge."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise FeatureError("empty lesion mask")
    h, w = mask.shape
    x0, x1 = xs.min() - pad, xs.max() + 1 + pad
    y0, y1 = ys.min() - pad, ys.max() + 1 + pad
    before = (max(0, -y0), max(0, -x0))
    after = (max(0, y1 - h), max(0, x1 - w))
    sy = slice(max(0, y0), min(h, y1))
    sx = slice(max(0, x0), min(w, x1))
    img = np.pad(image[sy, sx], ((before[0], after[0]), (before[1], after[1]), (0, 0)), mode="edge")
    m = np.pad(mask[sy, sx], ((before[0], after[0]), (before[1], after[1])), mode="constant")
    return img, m


def _lesion_region(mask: np.ndarray, flags: dict) -> Region:
    regions = connected_components(mask, 8)
    if not regions:
        raise FeatureError("empty lesion mask")
    if len(regions) > 1:
        flags["multiple_components"] = len(regions)
    best = max(regions, key=lambda r: r.area)
    return best


def extract_all(image: np.ndarray, seg, catalog: FeatureCatalog = CATALOG, image_id: str = "", mask_id: str = "") -> FeatureVector:
    """All catalog features of the lesion given by ``seg`` (a mask or a segmentation result)."""
    mask = np.asarray(getattr(seg, "mask", seg), dtype=bool)
    if mask.shape != image.shape[:2]:
        raise FeatureError("mask and image dimensions differ")
    flags: dict = {}
    img, m = crop_to_mask(image, mask)
    region = _lesion_region(m, flags)
    m = region.mask
    planes = channel_planes(img)
    gray = planes["gray"]

    vals: dict[str, float] = {}
    for name, v in zip((d.name for d in catalog if d.group == "color_basic"), color_basic(planes, m)):
        vals[name] = v
    for name, v in zip((d.name for d in catalog if d.group == "color_hist"), color_hist_nonzero(planes, m)):
        vals[name] = v

    layout = TriangleLayout(region)
    if layout.center_outside:
        flags["ct_center_outside"] = True
    parts = {pa: layout.parts(pa) for pa in CT_PARTS}
    bands = {sp: layout.bands(sp) for sp in CT_BANDS}
    for ch in CT_CHANNELS:
        pix = planes[ch][layout.ys, layout.xs]
        for pa in CT_PARTS:
            for sp in CT_BANDS:
                if layout.n_boundary < 2 * pa or layout.area < pa * sp:
                    raise FeatureError(f"ct_{ch}_pa{pa}_sp{sp}: lesion too small")
                vec = triangle_vectors(pix, parts[pa], bands[sp], pa, sp)
                vals[f"ct_{ch}_pa{pa}_sp{sp}"] = max_pairwise_distance(vec)

    for name, v in zip(("compactness", "solidity", "convexity", "dist_var"), border_shape(region)):
        vals[name] = v
    for nt in BF_SEGMENTS:
        vals[f"bf_mean_nt{nt}"], vals[f"bf_var_nt{nt}"] = border_fitting(region.boundary, nt)

    asym, isotropic = asymmetry(region, return_flag=True)
    vals["asymmetry"] = asym
    if isotropic:
        flags["asymmetry_isotropic"] = True

    for lv in GLCM_LEVELS:
        for prop, v in zip(("contrast", "energy", "correlation", "homogeneity"), glcm_features(gray, m, lv)):
            vals[f"glcm{lv}_{prop}"] = v
    vals["edge_density"] = edge_density(gray, m)
    for i, v in enumerate(lbp_s_histogram(gray, m)):
        vals[f"lbp_{i:02d}"] = v

    try:
        values = np.array([vals[n] for n in catalog.names], dtype=np.float64)
    except KeyError as exc:
        raise FeatureError(f"catalog feature {exc} has no extractor") from exc
    bad = [n for n, v in zip(catalog.names, values) if not np.isfinite(v)]
    if bad:
        raise FeatureError(f"non-finite feature values: {', '.join(bad)}")
    return FeatureVector(values, catalog, image_id, mask_id, flags)
