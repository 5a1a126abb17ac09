import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionkit.classify import (
    FusionError,
    FusionModel,
    KnnModel,
    SvmError,
    SvmModel,
    cosine_distance,
    fit_fusion,
    fit_weighted_fusion,
    fuse_sum,
    kkt_residuals,
    train_hierarchical,
    train_svm,
)
from lesionkit.classify.fusion import best_threshold, classifier_weight
from lesionkit.classify.knn import mixed_score
from lesionkit.classify.svm import fit_dual, sigmoid


def blobs(rng, n0=40, n1=20, sep=3.0, dim=2):
    X = np.vstack([rng.normal(0, 1, (n0, dim)), rng.normal(sep, 1, (n1, dim))])
    y = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    return X, y


# ---------------------------------------------------------------- SVM


def test_separable_training_accuracy(rng):
    X, y = blobs(rng, sep=8.0)
    m = train_svm(X, y, C=10.0)
    assert (m.predict(X) == y).all()
    assert len(m.support) >= 1


def test_kkt_and_box_constraints(rng):
    for seed in range(5):
        X, y = blobs(np.random.default_rng(seed), sep=1.5, dim=3)
        m = fit_dual(X, y, C=1.0)
        assert kkt_residuals(m, X).max() <= 1e-3
        a, C = m.solver["alpha"], m.solver["C"]
        assert (a >= 0).all() and (a <= C + 1e-12).all()
        assert abs(np.sum(a * m.solver["y"])) <= 1e-9
        assert set(np.unique(C)) == {1.0, 1.5}


def test_matches_libsvm_route(rng):
    svc_mod = pytest.importorskip("sklearn.svm")
    X, y = blobs(rng, sep=1.5, dim=3)
    m = fit_dual(X, y, C=1.0, gamma=0.5, weight_mm=1.5, tol=1e-6)
    Z = m.scaler.transform(X)
    ref = svc_mod.SVC(C=1.0, gamma=0.5, class_weight={0: 1.0, 1: 1.5}, tol=1e-8).fit(Z, y)
    np.testing.assert_allclose(m.decision(X), ref.decision_function(Z), atol=1e-4)


def test_ambiguous_duplicates_go_to_melanoma(rng):
    Xb = rng.normal(size=(30, 2))
    X = np.vstack([Xb, Xb])
    y = np.r_[np.zeros(30, int), np.ones(30, int)]
    m = train_svm(X, y, weight_mm=1.5)
    assert (m.predict(Xb) == 1).all()
    m = train_svm(X, y, weight_mm=1 / 1.5)
    assert (m.predict(Xb) == 0).all()


def test_sensitivity_non_decreasing_in_penalty_ratio():
    X, y = blobs(np.random.default_rng(4), n0=80, n1=20, sep=1.2, dim=2)
    sens = []
    for w in (1.0, 1.5, 3.0, 6.0):
        p = train_svm(X, y, weight_mm=w, calibrate=False).predict(X)
        sens.append(p[y == 1].mean())
    assert all(a <= b for a, b in zip(sens, sens[1:]))
    assert sens[-1] > sens[0]


def test_soft_calibration(rng):
    X, y = blobs(rng, sep=2.0)
    m = train_svm(X, y)
    assert m.calib_a > 0
    d = m.decision(X)
    s = m.soft(X)
    order = np.argsort(d)
    assert np.all(np.diff(s[order]) >= 0)
    assert ((s >= 0.5) == (d >= 0)).all()
    assert m.soft(X[y == 1].mean(axis=0, keepdims=True))[0] > 0.9  # deep inside the melanoma cluster
    assert sigmoid(0.0) == 0.5


@settings(max_examples=15)
@given(st.randoms(use_true_random=False))
def test_affine_rescaling_invariance(r):
    rng = np.random.default_rng(r.randint(0, 2**31))
    X, y = blobs(rng, sep=2.0, dim=3)
    a = rng.uniform(0.1, 50, 3)
    b = rng.uniform(-100, 100, 3)
    # solved tightly so both runs land on the same (unique) optimum
    m1 = fit_dual(X, y, tol=1e-9)
    m2 = fit_dual(X * a + b, y, tol=1e-9)
    T = rng.normal(1, 2, (25, 3))
    d1, d2 = m1.decision(T), m2.decision(T * a + b)
    np.testing.assert_allclose(d1, d2, atol=1e-6)
    sure = np.abs(d1) > 1e-6
    assert np.array_equal((d1 >= 0)[sure], (d2 >= 0)[sure])


def test_svm_errors_and_round_trip(rng):
    X, y = blobs(rng)
    with pytest.raises(SvmError):
        train_svm(X, np.zeros(len(y)))
    Xn = X.copy()
    Xn[0, 0] = np.nan
    with pytest.raises(SvmError):
        train_svm(Xn, y)
    m = train_svm(X, y)
    with pytest.raises(SvmError):
        m.decision(np.zeros((1, 3)))
    m2 = SvmModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(m.soft(X), m2.soft(X))


# ---------------------------------------------------------------- kNN


def test_knn_examples():
    H = np.eye(4)
    knn = KnnModel(H, [1, 1, 0, 0], k=2)
    assert knn.soft(np.array([[1.0, 1.0, 0, 0]]))[0] == 1.0
    assert knn.soft(np.array([[0, 0, 1.0, 1.0]]))[0] == 0.0
    assert mixed_score(1.0, 3.0) == 0.75
    assert mixed_score(0.0, 0.4) == 1.0
    assert KnnModel(H, [1, 0, 0, 0]).soft(H[:1])[0] == 1.0
    with pytest.raises(Exception):
        KnnModel(H[:1], [1], k=2).soft(H)


@given(st.floats(0.01, 2), st.floats(0.01, 2), st.floats(0.001, 0.5))
def test_mixed_score_monotone(d_m, d_b, eps):
    s = mixed_score(d_m, d_b)
    assert 0 <= s <= 1
    assert mixed_score(d_m, d_b + eps) > s
    assert mixed_score(d_m + eps, d_b) < s


def test_cosine_distance():
    D = cosine_distance(np.array([[1.0, 0], [1, 1]]), np.array([[2.0, 0], [0, 3]]))
    np.testing.assert_allclose(D, [[0, 1], [1 - 1 / np.sqrt(2), 1 - 1 / np.sqrt(2)]], atol=1e-12)


# ---------------------------------------------------------------- fusion


def test_fuse_sum_is_or():
    for bits in itertools.product((0, 1), repeat=4):
        assert fuse_sum(bits) == int(any(bits))
    with pytest.raises(FusionError):
        fuse_sum([1, 0])
    fm = FusionModel("sum")
    soft = np.array([[0.1, 0.2, 0.7, 0.0], [0, 0, 0, 0.0]])
    hard, fused = fm.decide(soft)
    assert hard.tolist() == [1, 0] and fused.tolist() == [0.7, 0.0]


def test_weights_definitional():
    labels = np.array([0, 0, 1, 1])
    assert classifier_weight([0.1, 0.2, 0.8, 0.9], labels, "weighted-auc") == 1.0
    assert classifier_weight([0.5, 0.5, 0.5, 0.5], labels, "weighted-auc") == 0.5
    assert classifier_weight([0.1, 0.2, 0.8, 0.9], labels, "weighted-sens") == 1.0
    with pytest.raises(FusionError):
        classifier_weight([0.1, 0.2], [1, 1], "weighted-auc")


def threshold_oracle(hard, labels, w):
    best, best_t = -1.0, None
    sums = [sum(wi * hi for wi, hi in zip(w, row)) for row in hard]
    cands = sorted({sum(wi for wi, b in zip(w, bits) if b) for bits in itertools.product((0, 1), repeat=len(w))} - {0.0})
    for t in cands:
        pred = [s >= t for s in sums]
        tpr = sum(p for p, l in zip(pred, labels) if l) / sum(labels)
        tnr = sum(not p for p, l in zip(pred, labels) if not l) / (len(labels) - sum(labels))
        if (tpr + tnr) / 2 > best + 1e-12:
            best, best_t = (tpr + tnr) / 2, t
    return best_t


def test_weighted_threshold_oracle():
    soft = np.array(
        [
            [0.9, 0.2, 0.6, 0.1],
            [0.8, 0.7, 0.4, 0.3],
            [0.3, 0.9, 0.7, 0.6],
            [0.6, 0.1, 0.2, 0.4],
            [0.2, 0.6, 0.1, 0.2],
            [0.1, 0.3, 0.8, 0.7],
        ]
    )
    labels = np.array([1, 1, 1, 0, 0, 0])
    for mode in ("weighted-auc", "weighted-sens"):
        fm = fit_weighted_fusion(soft, labels, mode)
        assert (fm.weights >= 0).all() and np.isfinite(fm.threshold)
        hard = (soft >= 0.5).astype(int)
        assert fm.threshold == pytest.approx(threshold_oracle(hard.tolist(), labels.tolist(), fm.weights.tolist()), abs=1e-12)


def test_weighted_all_perfect_lowest_threshold():
    labels = np.array([0, 0, 0, 1, 1, 1])
    soft = np.repeat(labels[:, None] * 0.8 + 0.1, 4, axis=1)
    fm = fit_weighted_fusion(soft, labels)
    assert np.allclose(fm.weights, 1) and fm.threshold == 1.0
    assert best_threshold(np.array([4.0, 0.0]), np.array([1, 0]), np.ones(4)) == 1.0


def test_hierarchical(rng):
    labels = np.r_[np.zeros(20, int), np.ones(20, int)]
    soft = rng.uniform(0, 0.4, (40, 4))
    soft[labels == 1] += 0.5
    fm = train_hierarchical(soft, labels)
    hard, fused = fm.decide(soft)
    assert (hard == labels).all()
    perm = [2, 0, 3, 1]
    fp = train_hierarchical(soft[:, perm], labels)
    T = rng.uniform(0, 1, (30, 4))
    assert np.array_equal(fp.decide(T[:, perm])[0], fm.decide(T)[0])
    with pytest.raises(FusionError):
        train_hierarchical(np.full((10, 4), 0.3), labels[15:25])
    back = FusionModel.from_dict(fm.to_dict())
    assert np.array_equal(back.decide(T)[1], fm.decide(T)[1])


def test_all_zero_softs_benign_everywhere(rng):
    labels = np.r_[np.zeros(15, int), np.ones(15, int)]
    soft = rng.uniform(0, 0.45, (30, 4))
    soft[labels == 1] += 0.5
    zero = np.zeros((1, 4))
    for mode in ("sum", "weighted-sens", "weighted-auc", "hierarchical"):
        assert fit_fusion(mode, soft, labels).decide(zero)[0][0] == 0
