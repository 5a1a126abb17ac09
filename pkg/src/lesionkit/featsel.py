"""Mutual-information feature selection with an optional neighbourhood-margin term.

Greedy NMIFS picks, at each step, the candidate maximising

    MI(L, f) - mean_{s in S} NMI(f, s)

and the hybrid criterion blends that with a normalised margin quality Q(f):

    U(f) = alpha * Q(f) / max_c Q(c) + (1 - alpha) * [MI(L, f) - mean_{s in S} NMI(f, s)]

MI terms use features discretized into equal-width bins spanning the training range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TIE_TOL = 1e-12
MODES = ("mi", "hybrid")


class SelectionError(ValueError):
    pass


# ---------------------------------------------------------------- discretization


@dataclass
class DiscretizedFeature:
    bins: np.ndarray
    n_bins: int
    edges: np.ndarray


def equal_width_edges(train: np.ndarray, n_bins: int) -> np.ndarray:
    if not 2 <= n_bins <= 6:
        raise ValueError("number of bins must lie in 2..6")
    train = np.asarray(train, dtype=np.float64)
    lo, hi = float(train.min()), float(train.max())
    if not hi > lo:
        raise SelectionError("cannot discretize a constant training feature")
    return np.linspace(lo, hi, n_bins + 1)


def apply_edges(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index per value; bins are closed on the left, values outside the edges clamp."""
    return np.searchsorted(edges[1:-1], np.asarray(values, dtype=np.float64), side="right")


def discretize(values, n_bins: int = 5, edges_from=None) -> DiscretizedFeature:
    values = np.asarray(values, dtype=np.float64)
    edges = equal_width_edges(values if edges_from is None else edges_from, n_bins)
    return DiscretizedFeature(apply_edges(values, edges), n_bins, edges)


@dataclass
class Discretizer:
    """Column-wise equal-width bins learned from training data."""

    n_bins: int = 5
    edges: list = field(default_factory=list)

    def fit(self, X: np.ndarray) -> Discretizer:
        X = np.asarray(X, dtype=np.float64)
        self.edges = []
        for j in range(X.shape[1]):
            col = X[:, j]
            if np.ptp(col) > 0:
                self.edges.append(equal_width_edges(col, self.n_bins))
            else:
                self.edges.append(None)  # constant column: single bin
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(X.shape, dtype=np.int64)
        for j, e in enumerate(self.edges):
            if e is not None:
                out[:, j] = apply_edges(X[:, j], e)
        return out


# ---------------------------------------------------------------- information measures


def _codes(x) -> np.ndarray:
    return np.unique(np.asarray(x), return_inverse=True)[1].ravel()


def entropy(x) -> float:
    """Plug-in entropy in bits."""
    counts = np.bincount(_codes(x))
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def mutual_information(x, y) -> float:
    """Plug-in MI in bits from the joint empirical distribution (0 log 0 = 0)."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D sequences of equal length")
    if len(x) < 2:
        raise ValueError("need at least two samples")
    cx, cy = _codes(x), _codes(y)
    nx, ny = cx.max() + 1, cy.max() + 1
    joint = np.bincount(cx * ny + cy, minlength=nx * ny).reshape(nx, ny).astype(np.float64)
    n = joint.sum()
    px = joint.sum(axis=1) / n
    py = joint.sum(axis=0) / n
    nz = joint > 0
    pxy = joint[nz] / n
    outer = (px[:, None] * py[None, :])[nz]
    return max(0.0, float(np.sum(pxy * np.log2(pxy / outer))))


def nmi(x, y) -> float:
    """``MI(x, y) / min(H(x), H(y))``."""
    hx, hy = entropy(x), entropy(y)
    if hx <= 0 or hy <= 0:
        raise SelectionError("normalized MI is undefined for a constant variable")
    return min(1.0, mutual_information(x, y) / min(hx, hy))


# ---------------------------------------------------------------- margin quality


def anm_quality(f, labels, n_frac: float = 0.5, standardize: bool = True) -> float:
    """Sum over samples of |mean distance to nearest other-class samples minus mean
    distance to nearest same-class samples|, distances measured in ``f`` alone.

    Each sample uses ``ceil(n_frac * |its class|)`` neighbours from each side (capped
    by availability; the sample itself is excluded). With ``standardize`` the feature
    is z-scored first, making Q invariant to affine changes of ``f``.
    """
    f = np.asarray(f, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise SelectionError("margin quality needs two classes with at least 2 samples each")
    if not 0 < n_frac <= 1:
        raise ValueError("n_frac must lie in (0, 1]")
    if standardize:
        sd = f.std()
        f = (f - f.mean()) / sd if sd > 0 else np.zeros_like(f)
    size = dict(zip(classes.tolist(), counts.tolist()))
    dist = np.abs(f[:, None] - f[None, :])
    same = labels[:, None] == labels[None, :]
    total = 0.0
    for i in range(len(f)):
        k = math.ceil(n_frac * size[labels[i].item()])
        own = np.delete(dist[i], i)[np.delete(same[i], i)]
        other = dist[i][~same[i]]
        k_o, k_e = min(k, len(own)), min(k, len(other))
        d_o = np.sort(own)[:k_o].mean()
        d_e = np.sort(other)[:k_e].mean()
        total += abs(d_e - d_o)
    return float(total)


# ---------------------------------------------------------------- greedy steps


def argmax_lowest(scores, candidates) -> int:
    """Candidate with the largest score; ties (within 1e-12) go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    best = scores.max()
    order = np.argsort(candidates, kind="stable")
    for pos in order:
        if scores[pos] >= best - TIE_TOL:
            return int(candidates[pos])
    raise AssertionError("unreachable")


def nmifs_scores(Xd: np.ndarray, labels, candidates, selected) -> np.ndarray:
    """``MI(L, f_i) - (1/|S|) sum_s NMI(f_i, f_s)`` for each candidate column of ``Xd``."""
    out = []
    for c in candidates:
        rel = mutual_information(labels, Xd[:, c])
        if selected:
            red = sum(_safe_nmi(Xd[:, c], Xd[:, s]) for s in selected) / len(selected)
        else:
            red = 0.0
        out.append(rel - red)
    return np.array(out)


def _safe_nmi(x, y) -> float:
    # a constant column carries no information and no redundancy
    try:
        return nmi(x, y)
    except SelectionError:
        return 0.0


def nmifs_step(Xd: np.ndarray, labels, candidates, selected) -> int:
    candidates = list(candidates)
    if not candidates:
        raise SelectionError("no candidates left")
    return argmax_lowest(nmifs_scores(Xd, labels, candidates, list(selected)), candidates)


def normalized_quality(q: np.ndarray) -> np.ndarray:
    top = q.max()
    return q / top if top > 0 else np.zeros_like(q)


def hybrid_scores(Xd, labels, candidates, selected, quality: dict, alpha: float) -> np.ndarray:
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    q = normalized_quality(np.array([quality[c] for c in candidates], dtype=np.float64))
    return alpha * q + (1 - alpha) * nmifs_scores(Xd, labels, candidates, selected)


def hybrid_step(Xd, labels, candidates, selected, quality: dict, alpha: float = 0.4) -> int:
    candidates = list(candidates)
    if not candidates:
        raise SelectionError("no candidates left")
    return argmax_lowest(hybrid_scores(Xd, labels, candidates, list(selected), quality, alpha), candidates)


# ---------------------------------------------------------------- selection


@dataclass
class SelectionResult:
    indices: list[int]
    scores: list[float]
    mode: str
    params: dict

    def to_dict(self, names=None) -> dict:
        d = {"indices": self.indices, "scores": self.scores, "mode": self.mode, "params": self.params}
        if names is not None:
            d["names"] = [names[i] for i in self.indices]
        return d


def select(
    X: np.ndarray,
    labels,
    m: int,
    category=None,
    mode: str = "hybrid",
    alpha: float = 0.4,
    n_bins: int = 5,
    n_frac: float = 0.5,
    standardize_q: bool = True,
) -> SelectionResult:
    """Greedy selection of ``m`` features among the columns picked by ``category``
    (a boolean mask or index list; all columns when None). Returned indices refer to
    columns of ``X``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if category is None:
        pool = list(range(X.shape[1]))
    else:
        cat = np.asarray(category)
        pool = np.flatnonzero(cat).tolist() if cat.dtype == bool else sorted(int(i) for i in cat)
    if m > len(pool):
        raise SelectionError(f"cannot select {m} features from a category of {len(pool)}")
    if m < 0:
        raise SelectionError("m must be non-negative")

    Xd = Discretizer(n_bins).fit(X[:, pool]).transform(X[:, pool])
    Xfull = np.zeros((X.shape[0], X.shape[1]), dtype=np.int64)
    Xfull[:, pool] = Xd

    quality = {}
    if mode == "hybrid":
        for c in pool:
            quality[c] = anm_quality(X[:, c], labels, n_frac, standardize_q)

    selected, scores = [], []
    remaining = list(pool)
    for _ in range(m):
        if mode == "mi":
            s = nmifs_scores(Xfull, labels, remaining, selected)
        else:
            s = hybrid_scores(Xfull, labels, remaining, selected, quality, alpha)
        best = argmax_lowest(s, remaining)
        scores.append(float(s[remaining.index(best)]))
        selected.append(best)
        remaining.remove(best)
    params = {"alpha": alpha, "n_bins": n_bins, "n_frac": n_frac, "standardize_q": standardize_q}
    return SelectionResult(selected, scores, mode, params)
