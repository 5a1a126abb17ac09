"""Fusion of the four per-category classifier outputs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..evaluation import auc_from_points, roc_points, sens_at_spec
from .svm import SvmError, SvmModel, train_svm

FUSION_MODES = ("sum", "weighted-sens", "weighted-auc", "hierarchical")
N_INPUTS = 4


class FusionError(ValueError):
    pass


def fuse_sum(hard) -> int:
    """Melanoma when at least one of the four hard votes is melanoma."""
    hard = np.asarray(hard).astype(int).ravel()
    if hard.size != N_INPUTS:
        raise FusionError(f"expected {N_INPUTS} hard values, got {hard.size}")
    return int(hard.sum() >= 1)


def classifier_weight(soft, labels, mode: str) -> float:
    try:
        pts = roc_points(soft, labels)
    except ValueError as exc:
        raise FusionError(f"degenerate validation ROC: {exc}") from exc
    if mode == "weighted-sens":
        return sens_at_spec(pts, 0.5)
    if mode == "weighted-auc":
        return auc_from_points(pts)
    raise ValueError(f"no weight rule for mode {mode!r}")


def weighted_sums(hard: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.asarray(hard, dtype=np.float64) @ weights


def balanced_accuracy(pred, labels) -> float:
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    return (np.mean(pred[labels]) + np.mean(~pred[~labels])) / 2


def best_threshold(sums: np.ndarray, labels, weights: np.ndarray) -> float:
    """Smallest positive subset sum of ``weights`` maximising balanced accuracy of
    ``sums >= t``."""
    subsets = np.array(list(itertools.product((0, 1), repeat=len(weights))))
    cands = np.unique(weighted_sums(subsets, weights))
    cands = cands[cands > 0]
    if cands.size == 0:
        raise FusionError("all fusion weights are zero")
    best_t, best = None, -1.0
    for t in cands:
        ba = balanced_accuracy(sums >= t, labels)
        if ba > best + 1e-12:
            best, best_t = ba, float(t)
    return best_t


@dataclass
class FusionModel:
    mode: str
    weights: np.ndarray | None = None
    threshold: float | None = None
    inner: SvmModel | None = None

    def decide(self, soft: np.ndarray):
        """``(hard, fused_soft)`` for an ``(n, 4)`` matrix of category soft scores."""
        soft = np.atleast_2d(np.asarray(soft, dtype=np.float64))
        if soft.shape[1] != N_INPUTS:
            raise FusionError(f"expected {N_INPUTS} soft scores per sample")
        hard = (soft >= 0.5).astype(np.int64)
        if self.mode == "sum":
            return (hard.sum(axis=1) >= 1).astype(np.int64), soft.max(axis=1)
        if self.mode in ("weighted-sens", "weighted-auc"):
            s = weighted_sums(hard, self.weights)
            fused = (s >= self.threshold).astype(np.int64)
            total = self.weights.sum()
            return fused, s / total
        if self.mode == "hierarchical":
            return self.inner.predict(soft), self.inner.soft(soft)
        raise FusionError(f"unknown fusion mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "weights": None if self.weights is None else self.weights.tolist(),
            "threshold": self.threshold,
            "inner": None if self.inner is None else self.inner.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FusionModel:
        return cls(
            d["mode"],
            None if d.get("weights") is None else np.asarray(d["weights"], dtype=np.float64),
            d.get("threshold"),
            None if d.get("inner") is None else SvmModel.from_dict(d["inner"]),
        )


def fit_weighted_fusion(val_soft, val_labels, mode: str = "weighted-auc") -> FusionModel:
    """Weights from each classifier's validation ROC, threshold by balanced accuracy."""
    val_soft = np.asarray(val_soft, dtype=np.float64)
    labels = np.asarray(val_labels).astype(int)
    if len(np.unique(labels)) < 2:
        raise FusionError("validation set must contain both classes")
    w = np.array([classifier_weight(val_soft[:, c], labels, mode) for c in range(val_soft.shape[1])])
    hard = (val_soft >= 0.5).astype(np.int64)
    t = best_threshold(weighted_sums(hard, w), labels, w)
    return FusionModel(mode, w, t)


def train_hierarchical(train_soft, labels, C: float = 1.0, gamma: float | None = None, weight_mm: float = 1.5, seed: int = 0) -> FusionModel:
    """Second-stage RBF SVM over the four soft scores."""
    train_soft = np.asarray(train_soft, dtype=np.float64)
    if np.all(np.ptp(train_soft, axis=0) == 0):
        raise FusionError("degenerate soft scores: every column is constant")
    try:
        inner = train_svm(train_soft, labels, C=C, gamma=gamma, weight_mm=weight_mm, seed=seed)
    except SvmError as exc:
        raise FusionError(f"hierarchical fusion: {exc}") from exc
    return FusionModel("hierarchical", inner=inner)


def fit_fusion(mode: str, soft, labels, **svm_kw) -> FusionModel:
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}")
    if mode == "sum":
        return FusionModel("sum")
    if mode == "hierarchical":
        return train_hierarchical(soft, labels, **svm_kw)
    return fit_weighted_fusion(soft, labels, mode)
