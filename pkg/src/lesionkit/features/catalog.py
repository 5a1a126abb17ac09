"""Ordered names and categories of the 116 lesion features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CATEGORIES = ("color", "border", "asymmetry", "texture")
COLOR_CHANNELS = ("red", "green", "blue", "gray", "hue", "value")
CT_CHANNELS = ("gray", "red", "hue")
CT_PARTS = (4, 8, 12, 16)
CT_BANDS = (2, 4, 8)
BF_SEGMENTS = (8, 12, 16, 20, 24, 28)
GLCM_LEVELS = (32, 64)
GLCM_PROPS = ("contrast", "energy", "correlation", "homogeneity")
N_LBP = 36


@dataclass(frozen=True)
class FeatureDef:
    name: str
    category: str
    group: str  # finer block used to route features to classifiers
    params: tuple = ()


def ct_name(channel: str, pa: int, sp: int) -> str:
    return f"ct_{channel}_pa{pa}_sp{sp}"


def _build() -> tuple[FeatureDef, ...]:
    out = []
    for ch in COLOR_CHANNELS:
        out.append(FeatureDef(f"mean_{ch}", "color", "color_basic", (ch,)))
        out.append(FeatureDef(f"var_{ch}", "color", "color_basic", (ch,)))
    for ch in COLOR_CHANNELS:
        out.append(FeatureDef(f"num_{ch}", "color", "color_hist", (ch,)))
    for ch in CT_CHANNELS:
        for pa in CT_PARTS:
            for sp in CT_BANDS:
                out.append(FeatureDef(ct_name(ch, pa, sp), "color", "color_triangle", (ch, pa, sp)))
    for name in ("compactness", "solidity", "convexity", "dist_var"):
        out.append(FeatureDef(name, "border", "border_shape"))
    for nt in BF_SEGMENTS:
        out.append(FeatureDef(f"bf_mean_nt{nt}", "border", "border_fitting", (nt,)))
        out.append(FeatureDef(f"bf_var_nt{nt}", "border", "border_fitting", (nt,)))
    out.append(FeatureDef("asymmetry", "asymmetry", "asymmetry"))
    for lv in GLCM_LEVELS:
        for prop in GLCM_PROPS:
            out.append(FeatureDef(f"glcm{lv}_{prop}", "texture", "glcm", (lv, prop)))
    out.append(FeatureDef("edge_density", "texture", "edge"))
    for i in range(N_LBP):
        out.append(FeatureDef(f"lbp_{i:02d}", "texture", "lbp", (i,)))
    return tuple(out)


class FeatureCatalog:
    def __init__(self, defs=None):
        self.defs = tuple(defs) if defs is not None else _build()
        self.names = [d.name for d in self.defs]
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.defs)

    def __iter__(self):
        return iter(self.defs)

    def index(self, name: str) -> int:
        return self._index[name]

    def indices(self, names) -> list[int]:
        return [self._index[n] for n in names]

    def category_counts(self) -> dict[str, int]:
        return {c: sum(d.category == c for d in self.defs) for c in CATEGORIES}

    def mask(self, category: str | None = None, group=None) -> np.ndarray:
        """Boolean selector over the catalog by category and/or group(s)."""
        if isinstance(group, str):
            group = (group,)
        return np.array(
            [(category is None or d.category == category) and (group is None or d.group in group) for d in self.defs]
        )

    def records(self) -> list[dict]:
        return [{"index": i, "name": d.name, "category": d.category, "group": d.group} for i, d in enumerate(self.defs)]


CATALOG = FeatureCatalog()
