from .fusion import (
    FUSION_MODES,
    FusionError,
    FusionModel,
    fit_fusion,
    fit_weighted_fusion,
    fuse_sum,
    train_hierarchical,
)
from .knn import KnnModel, cosine_distance, train_knn
from .svm import SvmError, SvmModel, kkt_residuals, rbf_kernel, train_svm

__all__ = [
    "FUSION_MODES",
    "FusionError",
    "FusionModel",
    "KnnModel",
    "SvmError",
    "SvmModel",
    "cosine_distance",
    "fit_fusion",
    "fit_weighted_fusion",
    "fuse_sum",
    "kkt_residuals",
    "rbf_kernel",
    "train_hierarchical",
    "train_knn",
    "train_svm",
]
