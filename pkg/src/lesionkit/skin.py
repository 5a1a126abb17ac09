"""Skin / non-skin pixel classification with a pair of diagonal RGB Gaussian mixtures."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .imgproc import fill_holes

log = logging.getLogger(__name__)

MAGIC = "LESIONKIT-SKIN"
VERSION = 1
VARIANCE_FLOOR = 1.0


class SkinModelError(ValueError):
    pass


@dataclass(eq=False)
class Gmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 3)
    variances: np.ndarray  # (K, 3)
    floored: bool = False
    loglik_history: list[float] = field(default_factory=list, repr=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def validate(self) -> None:
        k = len(self.weights)
        if k < 1:
            raise SkinModelError("mixture needs at least one component")
        if self.means.shape != (k, 3) or self.variances.shape != (k, 3):
            raise SkinModelError("mixture parameter shapes disagree")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9:
            raise SkinModelError(f"mixture weights sum to {np.sum(self.weights)}, expected 1")
        if np.any(self.weights < 0):
            raise SkinModelError("negative mixture weight")
        if not np.all(self.variances > 0):
            raise SkinModelError("covariance entries must be positive")

    def component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x | mu_k, diag var_k)`` for every sample and component."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        out = np.empty((len(x), self.n_components))
        for k in range(self.n_components):
            d = x - self.means[k]
            out[:, k] = (
                np.log(self.weights[k])
                - 0.5 * np.sum(np.log(2 * np.pi * self.variances[k]))
                - 0.5 * np.sum(d * d / self.variances[k], axis=1)
            )
        return out

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_logpdf(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Gmm:
        try:
            g = cls(
                np.asarray(d["weights"], dtype=np.float64),
                np.asarray(d["means"], dtype=np.float64).reshape(-1, 3),
                np.asarray(d["variances"], dtype=np.float64).reshape(-1, 3),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SkinModelError(f"malformed mixture record: {exc}") from exc
        g.validate()
        return g


def fit_gmm(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-9) -> Gmm:
    """EM for a diagonal-covariance Gaussian mixture.

    Means start at ``k`` distinct samples drawn with ``seed``; variances start at the
    pooled per-channel variance. Variances are floored at 1.0 and the model is
    flagged when the floor binds.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    n = len(x)
    if k < 1:
        raise SkinModelError("K must be >= 1")
    if n < 100 * k:
        raise SkinModelError(f"need at least {100 * k} pixels for K={k}, got {n}")

    rng = np.random.default_rng(seed)
    uniq = np.unique(x, axis=0)
    if len(uniq) >= k:
        means = uniq[np.sort(rng.choice(len(uniq), size=k, replace=False))].copy()
    else:
        means = x[rng.choice(n, size=k, replace=True)].copy()
    pooled = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    gmm = Gmm(np.full(k, 1.0 / k), means, np.tile(pooled, (k, 1)))

    prev = -np.inf
    for _ in range(max_iter):
        comp = gmm.component_logpdf(x)
        ll_rows = logsumexp(comp, axis=1)
        ll = float(ll_rows.sum())
        gmm.loglik_history.append(ll)
        if ll - prev <= tol * abs(ll):
            break
        prev = ll
        resp = np.exp(comp - ll_rows[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        means = (resp.T @ x) / nk[:, None]
        var = (resp.T @ (x * x)) / nk[:, None] - means**2
        floored = var < VARIANCE_FLOOR
        if floored.any():
            gmm.floored = True
        var = np.maximum(var, VARIANCE_FLOOR)
        w = nk / nk.sum()
        gmm.weights, gmm.means, gmm.variances = w / w.sum(), means, var
    if gmm.floored:
        log.warning("EM variance floor %.1f applied (component collapse)", VARIANCE_FLOOR)
    return gmm


@dataclass(eq=False)
class SkinModel:
    skin: Gmm
    nonskin: Gmm
    theta: float = 1.0

    @property
    def k(self) -> int:
        return self.skin.n_components

    def validate(self) -> None:
        self.skin.validate()
        self.nonskin.validate()
        if not np.isfinite(self.theta) or self.theta <= 0:
            raise SkinModelError("theta must be a positive finite number")

    def log_ratio(self, pixels: np.ndarray) -> np.ndarray:
        return self.skin.logpdf(pixels) - self.nonskin.logpdf(pixels)

    def to_dict(self) -> dict:
        return {
            "magic": MAGIC,
            "version": VERSION,
            "K": self.k,
            "theta": self.theta,
            "skin": self.skin.to_dict(),
            "nonskin": self.nonskin.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SkinModel:
        if not isinstance(d, dict) or d.get("magic") != MAGIC:
            raise SkinModelError("not a skin model file (bad magic)")
        if d.get("version") != VERSION:
            raise SkinModelError(f"unsupported skin model version {d.get('version')!r}")
        model = cls(Gmm.from_dict(d["skin"]), Gmm.from_dict(d["nonskin"]), float(d["theta"]))
        model.validate()
        return model

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SkinModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def train_skin_model(
    skin_pixels: np.ndarray,
    nonskin_pixels: np.ndarray,
    k: int = 8,
    seed: int = 0,
    theta: float = 1.0,
) -> SkinModel:
    skin = fit_gmm(skin_pixels, k, seed=seed)
    nonskin = fit_gmm(nonskin_pixels, k, seed=seed + 1)
    return SkinModel(skin, nonskin, theta)


def skin_likelihood_mask(image: np.ndarray, model: SkinModel) -> np.ndarray:
    """Per-pixel ``p(rgb|skin) / p(rgb|nonskin) >= theta`` before hole filling."""
    h, w = image.shape[:2]
    px = np.asarray(image, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
    # evaluate each distinct color once
    keys = (px[:, 0] << 16) | (px[:, 1] << 8) | px[:, 2]
    uniq, inverse = np.unique(keys, return_inverse=True)
    colors = np.stack([uniq >> 16, (uniq >> 8) & 255, uniq & 255], axis=1)
    hit = model.log_ratio(colors) >= np.log(model.theta)
    return hit[inverse].reshape(h, w)


def detect_skin(image: np.ndarray, model: SkinModel) -> np.ndarray:
    return fill_holes(skin_likelihood_mask(image, model))


def save_skin_model(model: SkinModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")


def load_skin_model(path: str | Path) -> SkinModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SkinModelError(f"malformed skin model file {path}: {exc}") from exc
    return SkinModel.from_dict(d)


def default_skin_model() -> SkinModel:
    """The bundled model fitted to the synthetic generator's skin tones."""
    text = resources.files("lesionkit").joinpath("data/skin_default.json").read_text()
    return SkinModel.from_dict(json.loads(text))
