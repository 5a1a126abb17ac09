"""Confusion statistics, ROC analysis and stratified cross-validation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


def _ratio(num: int, den: int):
    return num / den if den else None


def confusion_metrics(pred, truth) -> dict:
    """Counts and rates for binary predictions (1 = melanoma = positive).

    Undefined ratios (zero denominator) are reported as None.
    """
    pred = np.asarray(pred).astype(int).ravel()
    truth = np.asarray(truth).astype(int).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} labels")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    acc = (sens + spec) / 2 if sens is not None and spec is not None else None
    return {
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
        "n": len(truth),
        "sensitivity": sens,
        "specificity": spec,
        "balanced_accuracy": acc,
        "total_accuracy": _ratio(tp + tn, len(truth)),
        "ppv": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
    }


def _check_binary(truth):
    truth = np.asarray(truth).astype(int).ravel()
    n_pos = int(truth.sum())
    if n_pos == 0 or n_pos == len(truth):
        raise ValueError("ROC analysis needs both classes")
    return truth


def roc_points(soft, truth) -> np.ndarray:
    """Operating points ``(fpr, tpr, threshold)`` of the rule ``score >= t``.

    One point per distinct score, plus ``(0, 0)`` at ``t = +inf``; rows are ordered
    by increasing fpr (decreasing specificity). Tied scores move together, which
    gives the midpoint convention for the area.
    """
    truth = _check_binary(truth)
    soft = np.asarray(soft, dtype=np.float64).ravel()
    if soft.shape != truth.shape:
        raise ValueError("length mismatch")
    order = np.argsort(-soft, kind="stable")
    s, t = soft[order], truth[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(t)[last]
    fps = (last + 1) - tps
    n_pos, n_neg = int(truth.sum()), int(len(truth) - truth.sum())
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thr = np.r_[np.inf, s[last]]
    return np.column_stack([fpr, tpr, thr])


def auc_from_points(points: np.ndarray) -> float:
    fpr, tpr = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def sens_at_spec(points: np.ndarray, s: float) -> float:
    """Largest sensitivity among operating points with specificity >= s."""
    ok = (1.0 - points[:, 0]) >= s - 1e-12
    return float(points[ok, 1].max()) if ok.any() else 0.0


def roc_auc(soft, truth):
    """``(points, auc)`` for scores ``soft`` against binary ``truth``."""
    pts = roc_points(soft, truth)
    return pts, auc_from_points(pts)


def stratified_kfold(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per sample.

    Each class is shuffled with ``seed`` and dealt round-robin over the folds; the
    dealing position carries over from one class to the next so that fold sizes
    also stay within one of each other.
    """
    labels = np.asarray(labels).ravel()
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise ValueError(f"class {c} has {len(idx)} samples, fewer than k={k}")
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (offset + np.arange(len(idx))) % k
        offset += len(idx)
    return folds


@dataclass
class EvalReport:
    confusion: dict
    roc: list | None = None
    auc: float | None = None
    sens_at_spec: dict = field(default_factory=dict)
    folds: list = field(default_factory=list)
    fold_means: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion,
            "roc": self.roc,
            "auc": self.auc,
            "sens_at_spec": self.sens_at_spec,
            "folds": self.folds,
            "fold_means": self.fold_means,
            **self.extra,
        }


SPEC_LEVELS = (0.5, 0.8, 0.9, 0.95)


def summarize(pred, soft, truth, spec_levels=SPEC_LEVELS) -> EvalReport:
    rep = EvalReport(confusion_metrics(pred, truth))
    truth = np.asarray(truth).astype(int)
    if soft is not None and 0 < truth.sum() < len(truth):
        pts, auc = roc_auc(soft, truth)
        rep.roc = [[float(a), float(b)] for a, b, _ in pts]
        rep.auc = auc
        rep.sens_at_spec = {f"{s:.2f}": sens_at_spec(pts, s) for s in spec_levels}
    return rep


FitPredict = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]


def cross_validate(X, y, fit_predict: FitPredict, k: int = 10, seed: int = 0) -> EvalReport:
    """Stratified k-fold evaluation of ``fit_predict(X_train, y_train, X_test) -> (hard, soft)``.

    Everything learned from data must happen inside ``fit_predict`` so that only the
    training split is seen. A failing fold is recorded and skipped.
    """
    X = np.asarray(X)
    y = np.asarray(y).astype(int)
    folds = stratified_kfold(y, k, seed)
    hard = np.full(len(y), -1, dtype=np.int64)
    soft = np.full(len(y), np.nan)
    records = []
    for f in range(k):
        test = folds == f
        rec = {"fold": f, "n_test": int(test.sum())}
        try:
            h, s = fit_predict(X[~test], y[~test], X[test])
            hard[test] = np.asarray(h, dtype=np.int64)
            soft[test] = np.asarray(s, dtype=np.float64)
            m = confusion_metrics(hard[test], y[test])
            rec.update({key: m[key] for key in ("sensitivity", "specificity", "balanced_accuracy", "total_accuracy")})
            rec["status"] = "ok"
        except Exception as exc:  # noqa: BLE001 - a fold failure must not stop the run
            log.warning("fold %d failed: %s", f, exc)
            rec.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        records.append(rec)

    done = hard >= 0
    rep = summarize(hard[done], soft[done], y[done])
    rep.folds = records
    for key in ("sensitivity", "specificity", "balanced_accuracy", "total_accuracy"):
        vals = [r[key] for r in records if r.get("status") == "ok" and r.get(key) is not None]
        rep.fold_means[key] = float(np.mean(vals)) if vals else None
    rep.extra["n_failed_folds"] = int(sum(r["status"] == "failed" for r in records))
    return rep
