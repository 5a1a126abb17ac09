"""Class-weighted RBF support vector machine.

The dual

    min_a  1/2 a^T Q a - e^T a,   Q_ij = y_i y_j K(x_i, x_j)
    s.t.   y^T a = 0,  0 <= a_i <= C_i

is solved by sequential minimal optimization with second-order working-set
selection. ``C_i`` is ``C * weight_mm`` for melanoma samples and ``C`` otherwise.
Soft outputs are ``1 / (1 + exp(-A d))`` with ``d`` the decision value and ``A > 0``
fitted on cross-validated decision values, so ``soft >= 0.5`` iff ``d >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

TAU = 1e-12
KKT_TOL = 1e-3


class SvmError(ValueError):
    pass


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


@njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        # i: maximal violating index in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C[t]) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmin = np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C[t]):
                v = -y[t] * G[t]
                if v < gmin:
                    gmin = v
                if i >= 0 and v < gmax:
                    b = gmax - v
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0:
                        a = TAU
                    obj = -(b * b) / a
                    if obj < obj_min:
                        obj_min = obj
                        j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            break
        it += 1

        yi, yj = y[i], y[j]
        Ci, Cj = C[i], C[j]
        old_ai, old_aj = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if yi != yj:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > Ci - Cj:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = Ci - diff
            else:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = Cj + diff
        else:
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > Ci:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = s - Ci
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > Cj:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = s - Cj
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        for t in range(n):
            G[t] += y[t] * (yi * K[i, t] * dai + yj * K[j, t] * daj)

    # offset rho: mean of y_t G_t over free variables, else midpoint of the bounds
    ub = np.inf
    lb = -np.inf
    acc = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * G[t]
        at_upper = alpha[t] >= C[t]
        at_lower = alpha[t] <= 0
        if at_upper:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif at_lower:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            acc += yg
    if nfree > 0:
        rho = acc / nfree
    else:
        rho = (ub + lb) / 2
    return alpha, rho, it


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> Standardizer:
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass
class SvmModel:
    support: np.ndarray  # standardized support vectors
    coef: np.ndarray  # alpha_i * y_i
    rho: float
    gamma: float
    c_mm: float
    c_benign: float
    scaler: Standardizer
    calib_a: float = 1.0
    n_iter: int = 0
    solver: dict = field(default_factory=dict, repr=False)  # full duals, for diagnostics only

    @property
    def n_features(self) -> int:
        return len(self.scaler.mean)

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise SvmError(f"expected {self.n_features} features, got {X.shape[1]}")
        Z = self.scaler.transform(X)
        return rbf_kernel(Z, self.support, self.gamma) @ self.coef - self.rho

    def soft(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.calib_a * self.decision(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision(X) >= 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "support": self.support.tolist(),
            "coef": self.coef.tolist(),
            "rho": self.rho,
            "gamma": self.gamma,
            "c_mm": self.c_mm,
            "c_benign": self.c_benign,
            "mean": self.scaler.mean.tolist(),
            "scale": self.scaler.scale.tolist(),
            "calib_a": self.calib_a,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SvmModel:
        n_feat = len(d["mean"])
        return cls(
            np.asarray(d["support"], dtype=np.float64).reshape(-1, n_feat),
            np.asarray(d["coef"], dtype=np.float64),
            float(d["rho"]),
            float(d["gamma"]),
            float(d["c_mm"]),
            float(d["c_benign"]),
            Standardizer(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64)),
            float(d["calib_a"]),
        )


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).astype(np.int64).ravel()
    if len(X) != len(y):
        raise SvmError("X and y lengths differ")
    if not np.all(np.isfinite(X)):
        raise SvmError("non-finite feature values")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise SvmError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise SvmError("training data contains a single class")
    return X, y


def fit_dual(X, y, C: float = 1.0, gamma: float | None = None, weight_mm: float = 1.5, tol: float = KKT_TOL, max_iter: int = 10_000_000) -> SvmModel:
    """Solve the weighted soft-margin problem without calibration."""
    X, y = _check_xy(X, y)
    if C <= 0 or weight_mm <= 0:
        raise SvmError("penalties must be positive")
    gamma = 1.0 / X.shape[1] if gamma is None else float(gamma)
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    K = rbf_kernel(Z, Z, gamma)
    ys = np.where(y == 1, 1.0, -1.0)
    Cv = np.where(y == 1, C * weight_mm, C).astype(np.float64)
    alpha, rho, it = _smo(K, ys, Cv, tol, max_iter)
    sv = alpha > 0
    if not sv.any():
        raise SvmError("solver returned no support vectors")
    return SvmModel(
        Z[sv].copy(), (alpha * ys)[sv], float(rho), gamma, C * weight_mm, C, scaler, 1.0, int(it),
        solver={"alpha": alpha, "y": ys, "C": Cv},
    )


def fit_sigmoid_slope(d: np.ndarray, y: np.ndarray) -> float:
    """Slope ``A > 0`` of ``1 / (1 + exp(-A d))`` by regularised maximum likelihood
    with smoothed targets."""
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y).astype(int)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def nll(log_a):
        z = np.exp(log_a) * d
        # -[t log s(z) + (1 - t) log(1 - s(z))]
        return float(np.sum(np.logaddexp(0.0, -z) * t + np.logaddexp(0.0, z) * (1 - t)))

    res = minimize_scalar(nll, bounds=(np.log(1e-4), np.log(1e4)), method="bounded", options={"xatol": 1e-8})
    return float(np.exp(res.x))


def train_svm(
    X,
    y,
    C: float = 1.0,
    gamma: float | None = None,
    weight_mm: float = 1.5,
    calibrate: bool = True,
    seed: int = 0,
    cv_folds: int = 3,
) -> SvmModel:
    """Weighted RBF SVM with sigmoid calibration from internal cross-validation."""
    from ..evaluation import stratified_kfold

    X, y = _check_xy(X, y)
    model = fit_dual(X, y, C, gamma, weight_mm)
    if not calibrate:
        return model
    counts = np.bincount(y, minlength=2)
    if counts.min() >= cv_folds:
        folds = stratified_kfold(y, cv_folds, seed)
        d = np.empty(len(y))
        for f in range(cv_folds):
            test = folds == f
            try:
                inner = fit_dual(X[~test], y[~test], C, model.gamma, weight_mm)
                d[test] = inner.decision(X[test])
            except SvmError:
                d[test] = model.decision(X[test])
    else:
        d = model.decision(X)
    model.calib_a = fit_sigmoid_slope(d, y)
    return model


def kkt_residuals(model: SvmModel, X) -> np.ndarray:
    """Per-sample violation of the optimality conditions at the solved duals.

    With ``m_i = y_i f(x_i)``: points at the lower bound need ``m_i >= 1``, points at
    the upper bound ``m_i <= 1``, and free points ``m_i = 1``.
    """
    alpha, ys, Cv = model.solver["alpha"], model.solver["y"], model.solver["C"]
    Z = model.scaler.transform(np.asarray(X, dtype=np.float64).reshape(len(alpha), -1))
    K = rbf_kernel(Z, Z, model.gamma)
    f = K @ (alpha * ys) - model.rho
    m = ys * f
    res = np.empty(len(alpha))
    lower = alpha <= 0
    upper = alpha >= Cv
    free = ~lower & ~upper
    res[lower] = np.maximum(0.0, 1.0 - m[lower])
    res[upper] = np.maximum(0.0, m[upper] - 1.0)
    res[free] = np.abs(m[free] - 1.0)
    return res
