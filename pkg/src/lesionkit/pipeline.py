"""End-to-end flow: skin mask, segmentation, features, selection, classifiers, fusion."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .classify import FusionModel, KnnModel, SvmModel, fit_fusion, train_knn, train_svm
from .config import RunConfig
from .evaluation import EvalReport, cross_validate, stratified_kfold, summarize
from .features import CATALOG, FeatureCatalog, extract_all
from .featsel import select
from .imgproc import read_image, read_mask
from .segment import SegmentationError, segment_lesion, tdr
from .skin import SkinModel, default_skin_model, detect_skin, load_skin_model

log = logging.getLogger(__name__)

BUNDLE_MAGIC = "LESIONKIT-BUNDLE"
BUNDLE_VERSION = 1
SLOTS = ("color", "border", "asymmetry", "texture")
# catalog groups feeding each category classifier
SLOT_GROUPS = {
    "color": ("color_basic", "color_hist", "color_triangle"),
    "border": ("border_shape", "border_fitting"),
    "asymmetry": ("asymmetry",),
    "texture": ("glcm", "edge"),
}


class BundleError(ValueError):
    pass


def slot_pool(slot: str, catalog: FeatureCatalog = CATALOG) -> np.ndarray:
    return catalog.mask(group=SLOT_GROUPS[slot])


def skin_model_for(cfg: RunConfig) -> SkinModel:
    model = default_skin_model() if cfg.skin.model is None else load_skin_model(cfg.skin.model)
    model.theta = cfg.skin.theta
    return model


# ---------------------------------------------------------------- selection


def select_features(X: np.ndarray, y: np.ndarray, cfg: RunConfig, catalog: FeatureCatalog = CATALOG) -> dict[str, list[str]]:
    """Selected feature names per classifier slot."""
    sel = cfg.selection
    out = {}
    for slot in SLOTS:
        pool = slot_pool(slot, catalog)
        m = int(sel.lengths[slot])
        if not sel.enabled:
            if sel.fixed and slot in sel.fixed:
                out[slot] = list(sel.fixed[slot])
            else:
                out[slot] = [n for n, keep in zip(catalog.names, pool) if keep][:m]
            continue
        if pool.sum() == m:  # nothing to choose (asymmetry)
            out[slot] = [n for n, keep in zip(catalog.names, pool) if keep]
            continue
        res = select(X, y, m, pool, sel.mode, sel.alpha, sel.n_bins, sel.n_frac, sel.standardize_q)
        out[slot] = [catalog.names[i] for i in res.indices]
    return out


# ---------------------------------------------------------------- bundle


@dataclass
class Bundle:
    selected: dict[str, list[str]]
    svms: dict[str, SvmModel]
    knn: KnnModel
    fusion: FusionModel
    texture: str = "glcm_edge"
    config: dict = field(default_factory=dict)
    skin_model: str = "default"
    catalog: FeatureCatalog = field(default=CATALOG, repr=False)

    def lengths(self) -> dict[str, int]:
        out = {slot: len(self.selected[slot]) for slot in SLOTS}
        out["lbp"] = self.knn.hists.shape[1]
        return out

    def slot_soft(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Soft score of every trained classifier, including both texture variants."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.catalog):
            raise BundleError(f"expected {len(self.catalog)} features, got {X.shape[1]}")
        out = {}
        for slot in SLOTS:
            cols = self.catalog.indices(self.selected[slot])
            out[slot] = self.svms[slot].soft(X[:, cols])
        out["lbp"] = self.knn.soft(X[:, self.catalog.mask(group="lbp")])
        return out

    def fusion_inputs(self, scores: dict[str, np.ndarray]) -> np.ndarray:
        fourth = "lbp" if self.texture == "lbp" else "texture"
        return np.column_stack([scores["color"], scores["border"], scores["asymmetry"], scores[fourth]])

    def classify(self, X: np.ndarray) -> dict:
        scores = self.slot_soft(X)
        soft4 = self.fusion_inputs(scores)
        hard, fused = self.fusion.decide(soft4)
        return {"scores": scores, "soft": soft4, "hard": hard, "fused_soft": fused}

    def to_dict(self) -> dict:
        return {
            "magic": BUNDLE_MAGIC,
            "version": BUNDLE_VERSION,
            "tool_version": __version__,
            "catalog": self.catalog.names,
            "selected": self.selected,
            "svms": {k: v.to_dict() for k, v in self.svms.items()},
            "knn": self.knn.to_dict(),
            "fusion": self.fusion.to_dict(),
            "texture": self.texture,
            "config": self.config,
            "skin_model": self.skin_model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Bundle:
        if d.get("magic") != BUNDLE_MAGIC:
            raise BundleError("not a model bundle (bad magic)")
        if d.get("version") != BUNDLE_VERSION:
            raise BundleError(f"unsupported bundle version {d.get('version')!r}")
        if d["catalog"] != CATALOG.names:
            raise BundleError("bundle was trained with a different feature catalog")
        missing = [s for s in SLOTS if s not in d.get("svms", {})]
        if missing:
            raise BundleError(f"bundle lacks classifier(s): {', '.join(missing)}")
        return cls(
            {k: list(v) for k, v in d["selected"].items()},
            {k: SvmModel.from_dict(v) for k, v in d["svms"].items()},
            KnnModel.from_dict(d["knn"]),
            FusionModel.from_dict(d["fusion"]),
            d.get("texture", "glcm_edge"),
            d.get("config", {}),
            d.get("skin_model", "default"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Bundle:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise BundleError(f"malformed bundle {path}: {exc}") from exc
        return cls.from_dict(d)


def _train_slots(X, y, selected, cfg: RunConfig, seed: int):
    c = cfg.classifier
    svms = {}
    for slot in SLOTS:
        cols = CATALOG.indices(selected[slot])
        svms[slot] = train_svm(X[:, cols], y, C=c.C, gamma=c.gamma, weight_mm=c.weight_mm, seed=seed)
    knn = train_knn(X[:, CATALOG.mask(group="lbp")], y, c.knn_k)
    return svms, knn


def train_bundle(X, y, cfg: RunConfig, selected: dict | None = None) -> Bundle:
    """Select features (unless given), train the category classifiers and the fusion.

    Fusion is fitted on out-of-fold soft scores of the category classifiers so that
    it sees the kind of scores it will receive at prediction time.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    c = cfg.classifier
    if selected is None:
        selected = select_features(X, y, cfg)
    svms, knn = _train_slots(X, y, selected, cfg, cfg.seed)
    bundle = Bundle(selected, svms, knn, FusionModel("sum"), c.texture, cfg.to_dict())

    if c.fusion != "sum":
        folds = stratified_kfold(y, c.fusion_folds, cfg.seed)
        oof = np.zeros((len(y), 4))
        for f in range(c.fusion_folds):
            test = folds == f
            f_svms, f_knn = _train_slots(X[~test], y[~test], selected, cfg, cfg.seed)
            inner = Bundle(selected, f_svms, f_knn, bundle.fusion, c.texture)
            oof[test] = inner.fusion_inputs(inner.slot_soft(X[test]))
        bundle.fusion = fit_fusion(c.fusion, oof, y, C=c.C, weight_mm=c.weight_mm, seed=cfg.seed)
    return bundle


# ---------------------------------------------------------------- images


@dataclass
class ImageResult:
    image_id: str
    features: np.ndarray | None = None
    segmentation: dict = field(default_factory=dict)
    tdr: float | None = None
    error: str | None = None
    flags: dict = field(default_factory=dict)


def analyze_image(image, cfg: RunConfig, skin_model: SkinModel, gt=None, image_id: str = ""):
    """Skin mask, segmentation and features of one image; returns ``(ImageResult, segmentation)``."""
    skin = detect_skin(image, skin_model)
    seg = segment_lesion(image, skin, cfg.seg_config())
    fv = extract_all(image, seg, image_id=image_id)
    res = ImageResult(image_id, fv.values, seg.summary(), flags=fv.flags)
    if gt is not None:
        res.tdr = tdr(gt, seg.mask)
    return res, seg


def _analyze_entry(args) -> ImageResult:
    entry, cfg, skin_model = args
    try:
        image = read_image(entry.image)
        gt = read_mask(entry.mask)
        return analyze_image(image, cfg, skin_model, gt, entry.id)[0]
    except (SegmentationError, ValueError) as exc:
        return ImageResult(entry.id, error=f"{type(exc).__name__}: {exc}")


def corpus_features(entries, cfg: RunConfig, jobs: int = 1) -> list[ImageResult]:
    """Per-image analysis in manifest order (independent of ``jobs``)."""
    model = skin_model_for(cfg)
    tasks = [(e, cfg, model) for e in entries]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_analyze_entry, tasks, chunksize=4))
    return [_analyze_entry(t) for t in tasks]


# ---------------------------------------------------------------- evaluation


def evaluate_features(X, y, cfg: RunConfig) -> EvalReport:
    """Stratified k-fold CV of the trainable part of the pipeline on precomputed features.

    Selection (when ``selection.per_fold``), standardization, discretization and
    fusion are all fitted on the training split of each fold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    k, seed = cfg.evaluation.k_folds, cfg.seed
    global_sel = None if cfg.selection.per_fold else select_features(X, y, cfg)
    fold_out = []

    def fit_predict(Xtr, ytr, Xte):
        bundle = train_bundle(Xtr, ytr, cfg, global_sel)
        out = bundle.classify(Xte)
        fold_out.append((bundle.selected, out["scores"]))
        return out["hard"], out["fused_soft"]

    rep = cross_validate(X, y, fit_predict, k, seed)

    # per-classifier pooled results (each category alone, hard threshold 0.5)
    folds = stratified_kfold(y, k, seed)
    ok = [r["fold"] for r in rep.folds if r["status"] == "ok"]
    per_slot = {}
    if len(ok) == len(fold_out):
        for name in (*SLOTS, "lbp"):
            soft = np.full(len(y), np.nan)
            for f, (_, scores) in zip(ok, fold_out):
                soft[folds == f] = scores[name]
            done = ~np.isnan(soft)
            s = summarize((soft[done] >= 0.5).astype(int), soft[done], y[done])
            per_slot[name] = {"confusion": s.confusion, "auc": s.auc, "sens_at_spec": s.sens_at_spec}
        for r, f in zip([r for r in rep.folds if r["status"] == "ok"], range(len(fold_out))):
            r["selected"] = fold_out[f][0]
    rep.extra["per_classifier"] = per_slot
    rep.extra["fusion"] = cfg.classifier.fusion
    return rep


def report_json(payload: dict, cfg: RunConfig) -> str:
    """Deterministic report text: sorted keys, config echo and tool version, no timestamps."""
    doc = dict(payload)
    doc["config"] = cfg.to_dict()
    doc["tool_version"] = __version__
    return json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------- feature tables


def write_feature_table(path, ids, labels, X, catalog: FeatureCatalog = CATALOG) -> None:
    """CSV with columns ``id, label, <catalog names>``; floats written with ``repr``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", *catalog.names])
        for i, lab, row in zip(ids, labels, np.asarray(X, dtype=np.float64)):
            w.writerow([i, "" if lab is None else int(lab), *(repr(float(v)) for v in row)])


def read_feature_table(path, catalog: FeatureCatalog = CATALOG):
    """``(ids, labels or None, X)`` from a table written by ``write_feature_table``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty feature table")
    head = rows[0]
    if head[:2] != ["id", "label"] or head[2:] != catalog.names:
        raise ValueError(f"{path}: header does not match the feature catalog")
    ids = [r[0] for r in rows[1:]]
    raw = [r[1] for r in rows[1:]]
    labels = None if any(v == "" for v in raw) else np.array([int(v) for v in raw])
    X = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=np.float64).reshape(len(ids), len(catalog))
    return ids, labels, X
