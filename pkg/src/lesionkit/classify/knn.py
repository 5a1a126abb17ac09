"""Cosine-distance nearest neighbours over LBP histograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class KnnError(ValueError):
    pass


def cosine_distance(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    sim = (A @ B.T) / np.outer(np.where(na > 0, na, 1.0), np.where(nb > 0, nb, 1.0))
    return np.clip(1.0 - sim, 0.0, 2.0)


def mixed_score(d_m: float, d_b: float) -> float:
    """``d_b / (d_m + d_b)``: 1 when the melanoma neighbour coincides with the query."""
    tot = d_m + d_b
    return 0.5 if tot <= 0 else d_b / tot


@dataclass
class KnnModel:
    hists: np.ndarray
    labels: np.ndarray
    k: int = 2

    def __post_init__(self):
        self.hists = np.asarray(self.hists, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.k < 1:
            raise KnnError("k must be >= 1")

    def soft(self, H: np.ndarray) -> np.ndarray:
        """Score in [0, 1]: 1 (0) when all k neighbours are melanoma (benign);
        otherwise the nearest melanoma and benign distances among them are combined."""
        if len(self.hists) < self.k:
            raise KnnError(f"need at least k={self.k} stored samples, have {len(self.hists)}")
        D = cosine_distance(H, self.hists)
        out = np.empty(len(D))
        for r, row in enumerate(D):
            nn = np.argsort(row, kind="stable")[: self.k]
            labs = self.labels[nn]
            if labs.all():
                out[r] = 1.0
            elif not labs.any():
                out[r] = 0.0
            else:
                d_m = row[nn[labs == 1]].min()
                d_b = row[nn[labs == 0]].min()
                out[r] = mixed_score(d_m, d_b)
        return out

    def predict(self, H: np.ndarray) -> np.ndarray:
        return (self.soft(H) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {"hists": self.hists.tolist(), "labels": self.labels.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> KnnModel:
        return cls(np.asarray(d["hists"]), np.asarray(d["labels"]), int(d["k"]))


def train_knn(hists, labels, k: int = 2) -> KnnModel:
    return KnnModel(hists, labels, k)
