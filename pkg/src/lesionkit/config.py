"""Run configuration: nested JSON with documented defaults; unknown keys are rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class SkinSection:
    model: str | None = None  # path to a skin model file; None = bundled default
    k: int = 8
    theta: float = 1.0


@dataclass
class SegmentationSection:
    max_dim: int = 256
    valid_fraction: float = 0.8
    k_coarse: float = 400.0
    k_fine: float | None = None
    min_size_coarse: float = 0.002
    min_size_fine: float = 0.01
    crop_padding: float = 0.25
    majority_window: int = 5
    mst_sigma: float = 0.8
    dark_lesion: bool = True


@dataclass
class SelectionSection:
    enabled: bool = True
    mode: str = "hybrid"  # "mi" or "hybrid"
    alpha: float = 0.4
    n_bins: int = 5
    n_frac: float = 0.5
    standardize_q: bool = True
    per_fold: bool = True  # False: select once on the whole working set
    lengths: dict = field(default_factory=lambda: {"color": 3, "border": 2, "asymmetry": 1, "texture": 3})
    fixed: dict | None = None  # category -> feature names, used when disabled


@dataclass
class ClassifierSection:
    C: float = 1.0
    gamma: float | None = None  # None: 1 / number of features
    weight_mm: float = 1.5
    knn_k: int = 2
    texture: str = "glcm_edge"  # fourth classifier: "glcm_edge" (SVM) or "lbp" (kNN)
    fusion: str = "hierarchical"
    fusion_folds: int = 3


@dataclass
class EvaluationSection:
    k_folds: int = 10


@dataclass
class RunConfig:
    config_version: int = CONFIG_VERSION
    seed: int = 0
    skin: SkinSection = field(default_factory=SkinSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {self.config_version}")
        if self.selection.mode not in ("mi", "hybrid"):
            raise ConfigError("selection.mode must be 'mi' or 'hybrid'")
        if not 0 <= self.selection.alpha <= 1:
            raise ConfigError("selection.alpha must lie in [0, 1]")
        if not 2 <= self.selection.n_bins <= 6:
            raise ConfigError("selection.n_bins must lie in 2..6")
        if self.classifier.texture not in ("glcm_edge", "lbp"):
            raise ConfigError("classifier.texture must be 'glcm_edge' or 'lbp'")
        from .classify import FUSION_MODES

        if self.classifier.fusion not in FUSION_MODES:
            raise ConfigError(f"classifier.fusion must be one of {FUSION_MODES}")
        if self.evaluation.k_folds < 2:
            raise ConfigError("evaluation.k_folds must be >= 2")
        try:
            self.seg_config()
        except ValueError as exc:
            raise ConfigError(f"segmentation: {exc}") from exc

    def seg_config(self):
        from .segment import SegConfig

        return SegConfig(**asdict(self.segmentation))

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
